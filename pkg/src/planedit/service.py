"""HTTP editing service: one edit, many views, background adaptation.

POST /edit runs the editor once and caches the resulting triplane per
session; GET /render re-renders that cached triplane at new poses without
touching the encoder, which is what makes orbiting cheap. POST /adapt runs
fast adaptation on a clone of the served model in a background thread and
hot-swaps the serving reference atomically when it finishes; a version
counter and a parameter hash expose the swap to clients and tests.

Rendering always runs in deterministic eval mode, so identical requests
return byte-identical images. Errors use machine-readable codes inside the
response detail: bad_image, image_too_large, pose_out_of_range, bad_pairs,
adapt_busy, unknown_session, unknown_job, model_not_loaded.
"""

from __future__ import annotations

import base64
import binascii
import tempfile
import threading
import time
import uuid
from pathlib import Path

import torch
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import Response
from pydantic import BaseModel, Field

from .cameras import pose_from_angles
from .errors import ValidationError
from .network import Prompt
from .renderer import depth_bytes, load_png, png_bytes
from .training import (
    AdaptPair,
    TrainState,
    adapt,
    load_checkpoint,
    params_hash,
    save_checkpoint,
    student_render,
)

YAW_RANGE = (-90.0, 90.0)
PITCH_RANGE = (-45.0, 45.0)
PREVIEW_OFFSETS = [(-30.0, 0.0), (30.0, 0.0), (0.0, 15.0), (-15.0, -10.0), (15.0, 10.0)]


class PromptPayload(BaseModel):
    type: str
    text: str | None = None
    image: str | None = None  # base64 PNG


class EditRequest(BaseModel):
    image: str  # base64 PNG
    prompt: PromptPayload
    yaw: float = 0.0
    pitch: float = 0.0
    seed: int | None = None  # reserved; the render path is deterministic


class NovelView(BaseModel):
    yaw: float
    pitch: float
    image: str


class EditResponse(BaseModel):
    edited: str
    novel_views: list[NovelView]
    depth: str
    latency_ms: float
    session_id: str
    params_version: int


class AdaptJobStatus(BaseModel):
    job_id: str
    status: str  # queued | running | done | failed
    progress: dict = Field(default_factory=lambda: {"step": 0, "total": 0})
    heldout_curve: list = Field(default_factory=list)
    error: str | None = None
    params_version: int | None = None


def _err(status_code: int, code: str, message: str):
    raise HTTPException(status_code=status_code, detail={"code": code, "message": message})


class _Session:
    def __init__(self, triplane, params_version: int):
        self.triplane = triplane
        self.params_version = params_version
        self.created = time.monotonic()


class Serving:
    """Mutable server core: model snapshot, session cache, one adapt writer."""

    def __init__(self, state: TrainState | None, *, ttl_s: float, adapt_steps: int):
        self.lock = threading.Lock()
        self.state = state
        self.params_version = 1
        self.hash = params_hash(state.model) if state is not None else None
        self.sessions = {}
        self.jobs = {}
        self.adapt_thread = None
        self.ttl_s = ttl_s
        self.adapt_steps = adapt_steps

    def snapshot(self) -> tuple[TrainState, int]:
        with self.lock:
            if self.state is None:
                _err(503, "model_not_loaded", "serve was started without a checkpoint")
            return self.state, self.params_version

    def store_session(self, triplane, version: int) -> str:
        sid = uuid.uuid4().hex
        with self.lock:
            self._evict_expired()
            self.sessions[sid] = _Session(triplane, version)
        return sid

    def get_session(self, sid: str) -> _Session:
        with self.lock:
            self._evict_expired()
            s = self.sessions.get(sid)
        if s is None:
            _err(404, "unknown_session", f"no cached session {sid}")
        return s

    def _evict_expired(self):
        now = time.monotonic()
        dead = [k for k, s in self.sessions.items() if now - s.created > self.ttl_s]
        for k in dead:
            del self.sessions[k]

    def swap(self, new_state: TrainState) -> int:
        with self.lock:
            self.state = new_state
            self.params_version += 1
            self.hash = params_hash(new_state.model)
            return self.params_version


def _decode_image(b64: str, image_res: int, max_bytes: int) -> torch.Tensor:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        _err(400, "bad_image", "image is not valid base64")
    if len(raw) > max_bytes:
        _err(413, "image_too_large", f"image exceeds {max_bytes} bytes")
    try:
        img = load_png(raw)
    except Exception:
        _err(400, "bad_image", "image is not a decodable PNG")
    if img.shape != (image_res, image_res, 3):
        _err(400, "bad_image", f"image must be {image_res}x{image_res} RGB, got {tuple(img.shape)}")
    return img


def _check_pose(yaw: float, pitch: float):
    if not (YAW_RANGE[0] <= yaw <= YAW_RANGE[1]) or not (PITCH_RANGE[0] <= pitch <= PITCH_RANGE[1]):
        _err(
            400,
            "pose_out_of_range",
            f"yaw must be in {YAW_RANGE}, pitch in {PITCH_RANGE}",
        )


def _clone_state(state: TrainState) -> TrainState:
    """Round-trip through the checkpoint format; never shares tensors."""
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "clone.ckpt"
        save_checkpoint(p, state)
        return load_checkpoint(p)


def create_app(
    state: TrainState | None = None,
    *,
    n_preview: int = 3,
    ttl_s: float = 600.0,
    max_image_bytes: int = 2_000_000,
    adapt_steps: int = 100,
    max_pairs: int = 16,
) -> FastAPI:
    app = FastAPI(title="planedit service")
    serving = Serving(state, ttl_s=ttl_s, adapt_steps=adapt_steps)
    app.state.serving = serving
    if n_preview > len(PREVIEW_OFFSETS):
        raise ValidationError(f"n_preview supports at most {len(PREVIEW_OFFSETS)} views")

    def view_pose(st: TrainState, yaw: float, pitch: float):
        m = st.cfg.model
        return pose_from_angles(
            yaw, pitch, m.ring_radius, image_res=m.image_res, fov_scale=m.fov_scale
        )

    def render_view(st: TrainState, triplane, yaw: float, pitch: float):
        return student_render(
            st.model,
            triplane,
            view_pose(st, yaw, pitch),
            samples_per_ray=st.cfg.model.samples_per_ray,
        )

    @app.get("/healthz")
    def healthz():
        with serving.lock:
            return {
                "status": "ok",
                "model_loaded": serving.state is not None,
                "params_version": serving.params_version,
                "params_hash": serving.hash,
            }

    @app.post("/edit", response_model=EditResponse)
    def edit(req: EditRequest):
        st, version = serving.snapshot()
        mcfg = st.cfg.model
        _check_pose(req.yaw, req.pitch)
        img = _decode_image(req.image, mcfg.image_res, max_image_bytes)
        if req.prompt.type == "text":
            if not req.prompt.text:
                _err(400, "bad_image", "text prompt requires a text field")
            prompt = Prompt.from_text(req.prompt.text)
        elif req.prompt.type == "image":
            if req.prompt.image is None:
                _err(400, "bad_image", "image prompt requires an image field")
            prompt = Prompt.from_image(
                _decode_image(req.prompt.image, mcfg.image_res, max_image_bytes)
            )
        else:
            _err(400, "bad_image", f"unknown prompt type {req.prompt.type!r}")

        t0 = time.perf_counter()
        try:
            with torch.no_grad():
                tri = st.model.edit(img, prompt)
                main = render_view(st, tri, req.yaw, req.pitch)
                previews = []
                for dy, dp in PREVIEW_OFFSETS[:n_preview]:
                    y = min(max(req.yaw + dy, YAW_RANGE[0]), YAW_RANGE[1])
                    p = min(max(req.pitch + dp, PITCH_RANGE[0]), PITCH_RANGE[1])
                    out = render_view(st, tri, y, p)
                    previews.append(
                        NovelView(
                            yaw=y,
                            pitch=p,
                            image=base64.b64encode(png_bytes(out.rgb_final)).decode(),
                        )
                    )
        except ValidationError as e:
            _err(400, "bad_image", str(e))
        latency = (time.perf_counter() - t0) * 1000.0
        sid = serving.store_session(tri, version)
        return EditResponse(
            edited=base64.b64encode(png_bytes(main.rgb_final)).decode(),
            novel_views=previews,
            depth=base64.b64encode(depth_bytes(main.depth)).decode(),
            latency_ms=latency,
            session_id=sid,
            params_version=version,
        )

    @app.get("/render")
    def render(session: str, yaw: float = 0.0, pitch: float = 0.0):
        st, _ = serving.snapshot()
        _check_pose(yaw, pitch)
        sess = serving.get_session(session)
        with torch.no_grad():
            out = render_view(st, sess.triplane, yaw, pitch)
        return Response(content=png_bytes(out.rgb_final), media_type="image/png")

    @app.post("/adapt", response_model=AdaptJobStatus)
    def start_adapt(
        inputs: list[UploadFile] = File(...),
        targets: list[UploadFile] = File(...),
        prompt_text: str = Form("adapted style"),
    ):
        st, _ = serving.snapshot()
        mcfg = st.cfg.model
        if not inputs or len(inputs) != len(targets):
            _err(422, "bad_pairs", "inputs and targets must be nonempty and equal length")
        if len(inputs) > max_pairs:
            _err(422, "bad_pairs", f"at most {max_pairs} pairs accepted")
        front = pose_from_angles(
            0.0,
            mcfg.ring_elevation_deg,
            mcfg.ring_radius,
            image_res=mcfg.image_res,
            fov_scale=mcfg.fov_scale,
        )
        pairs = []
        try:
            prompt = Prompt.from_text(prompt_text)
            for fi, ft in zip(inputs, targets):
                a = load_png(fi.file.read())
                b = load_png(ft.file.read())
                if a.shape != (mcfg.image_res, mcfg.image_res, 3) or a.shape != b.shape:
                    raise ValidationError("pair images must match the model resolution")
                pairs.append(
                    AdaptPair(input_image=a, target_image=b, prompt=prompt, input_pose=front)
                )
        except ValidationError as e:
            _err(422, "bad_pairs", str(e))
        except Exception:
            _err(422, "bad_pairs", "pair files are not decodable PNGs")

        with serving.lock:
            if serving.adapt_thread is not None and serving.adapt_thread.is_alive():
                _err(409, "adapt_busy", "an adaptation job is already running")
            job_id = uuid.uuid4().hex
            job = AdaptJobStatus(
                job_id=job_id,
                status="queued",
                progress={"step": 0, "total": serving.adapt_steps},
            )
            serving.jobs[job_id] = job

            def run():
                try:
                    clone = _clone_state(st)
                    job.status = "running"
                    heldout = [pairs[-1]] if len(pairs) >= 2 else None
                    train_pairs = pairs[:-1] if heldout else pairs

                    def cb(step, total):
                        job.progress = {"step": step, "total": total}

                    result = adapt(
                        clone,
                        train_pairs,
                        serving.adapt_steps,
                        heldout=heldout,
                        progress_cb=cb,
                        curve_every=max(serving.adapt_steps // 8, 1),
                    )
                    job.heldout_curve = result["heldout_curve"]
                    job.params_version = serving.swap(clone)
                    job.status = "done"
                except Exception as e:  # background thread: surface via status
                    job.error = str(e)
                    job.status = "failed"

            serving.adapt_thread = threading.Thread(target=run, daemon=True)
            serving.adapt_thread.start()
        return job

    @app.get("/adapt/{job_id}", response_model=AdaptJobStatus)
    def adapt_status(job_id: str):
        with serving.lock:
            job = serving.jobs.get(job_id)
        if job is None:
            _err(404, "unknown_job", f"no adaptation job {job_id}")
        return job

    return app


def serve(state: TrainState, *, host: str = "127.0.0.1", port: int = 8008, **kwargs):
    import uvicorn

    uvicorn.run(create_app(state, **kwargs), host=host, port=port)
