"""Training loops: reconstruction pretrain, teacher distillation, adaptation.

Phases differ only in which parameter groups stay trainable and which loss
terms run. Distillation follows the two-part objective

    total = lambda1 * edit loss at the input view
          + lambda2 * (ring image loss + triplane L1 + masked depth L1)

with both lambdas 1 by default. All run-to-run randomness (batch choice,
ray jitter, ring view subsets) flows from one torch.Generator whose state
is checkpointed, so a resumed run replays the original step for step.
"""

from __future__ import annotations

import base64
import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .cameras import CameraPose
from .config import TrainConfig, config_to_dict, train_config_from_dict
from .errors import CheckpointError, TrainingDivergedError, ValidationError
from .losses import LossReport, PerceptualNet, image_loss, loss_2d, loss_3d
from .network import EditorModel, Prompt
from .renderer import RenderOutput, render_full
from .world import EditDataset, EditRecord

CKPT_MAGIC = "CKPT v1"

FREEZE_POLICIES = ("pretrain", "distill", "adapt")


def apply_freeze(model: EditorModel, policy: str) -> list:
    """Set requires_grad per parameter; returns sorted trainable names.

    pretrain: everything. distill: prompt encoder and fusion decoder only.
    adapt: prompt encoder plus the layer norms inside the fusion decoder.
    """
    if policy not in FREEZE_POLICIES:
        raise ValidationError(f"unknown freeze policy {policy!r}")
    norm_names = set(model.norm_param_names())
    trainable = []
    for name, p in model.named_parameters():
        group = name.split(".", 1)[0]
        if policy == "pretrain":
            on = True
        elif policy == "distill":
            on = group in ("e_p", "e_t")
        else:
            on = group == "e_p" or name in norm_names
        p.requires_grad_(on)
        if on:
            trainable.append(name)
    return sorted(trainable)


@dataclass
class TrainState:
    cfg: TrainConfig
    model: EditorModel
    perceptual: PerceptualNet
    opt: torch.optim.Adam
    gen: torch.Generator
    step: int = 0
    policy: str = "distill"
    lr: float = 0.0
    optimized_with_embedders: list = dc_field(default_factory=list)


def _build_optimizer(model: EditorModel, lr: float) -> torch.optim.Adam:
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValidationError("freeze policy left nothing trainable")
    return torch.optim.Adam(params, lr=lr)


def make_state(cfg: TrainConfig, *, policy: str = "distill", lr: float | None = None) -> TrainState:
    cfg.validate()
    model = EditorModel(cfg.model, seed=cfg.seed)
    apply_freeze(model, policy)
    use_lr = cfg.lr if lr is None else lr
    opt = _build_optimizer(model, use_lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    return TrainState(
        cfg=cfg,
        model=model,
        perceptual=PerceptualNet(cfg.weights.perceptual_seed),
        opt=opt,
        gen=gen,
        policy=policy,
        lr=use_lr,
    )


def set_policy(state: TrainState, policy: str, *, lr: float | None = None):
    """Switch phase: refreeze and rebuild the optimizer over the new set."""
    apply_freeze(state.model, policy)
    state.policy = policy
    if lr is not None:
        state.lr = lr
    state.opt = _build_optimizer(state.model, state.lr)


def record_prompt(record: EditRecord, dataset: EditDataset) -> Prompt:
    if record.prompt_kind == "text":
        return Prompt.from_text(record.prompt_text)
    return Prompt.from_image(dataset.exemplars[record.style_name])


def student_render(
    model: EditorModel,
    triplane,
    pose: CameraPose,
    *,
    samples_per_ray: int,
    mode: str = "eval",
    seed: int | None = None,
) -> RenderOutput:
    r = model.cfg.image_res
    return render_full(
        triplane, model.decoder_mlp, model.upsampler, pose, r, r, samples_per_ray, mode, seed
    )


def _loss_for_record(
    state: TrainState,
    dataset: EditDataset,
    record: EditRecord,
    view_idx: list,
    base_seed: int,
    *,
    use_edit_path: bool,
) -> dict:
    """Tensors for one record; skips any branch whose lambda is zero."""
    cfg = state.cfg
    w = cfg.weights
    model = state.model
    if use_edit_path:
        tri = model.edit(record.input_image, record_prompt(record, dataset))
    else:
        tri = model.reconstruct(record.input_image)

    out = {}
    if w.lambda1 > 0.0:
        r_in = student_render(
            model,
            tri,
            record.input_pose,
            samples_per_ray=cfg.samples_per_ray,
            mode="train",
            seed=base_seed,
        )
        out["l_2d"] = loss_2d(r_in.rgb_final, record.target_image, state.perceptual, w)
    if w.lambda2 > 0.0:
        imgs, deps = [], []
        for j, vi in enumerate(view_idx):
            r = student_render(
                model,
                tri,
                record.ring_poses[vi],
                samples_per_ray=cfg.samples_per_ray,
                mode="train",
                seed=base_seed + 7 * j + 1,
            )
            imgs.append(r.rgb_final)
            deps.append(r.depth)
        l3d, l_img, l_tri, l_dep = loss_3d(
            tri,
            record.t_gt,
            torch.stack(imgs),
            record.ring_images[view_idx],
            torch.stack(deps),
            record.ring_depths[view_idx],
            state.perceptual,
            w,
        )
        out.update(l_3d=l3d, l_3d_image=l_img, l_3d_triplane=l_tri, l_3d_depth=l_dep)
    return out


def train_step(
    state: TrainState,
    dataset: EditDataset,
    records: list,
    *,
    use_edit_path: bool = True,
) -> LossReport:
    """One optimizer step over a sampled minibatch. Raises on non-finite loss."""
    cfg = state.cfg
    w = cfg.weights
    step_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=state.gen))
    n = len(records)
    take = min(cfg.batch_size, n)
    batch_idx = torch.randperm(n, generator=state.gen)[:take].tolist()
    view_idx = torch.randperm(
        cfg.model.ring_n, generator=state.gen
    )[: cfg.views_per_step].tolist()

    keys = ("l_2d", "l_3d", "l_3d_image", "l_3d_triplane", "l_3d_depth")
    sums = {k: None for k in keys}
    for bi, ri in enumerate(batch_idx):
        parts = _loss_for_record(
            state,
            dataset,
            records[ri],
            view_idx,
            step_seed + 1013 * bi,
            use_edit_path=use_edit_path,
        )
        for k, v in parts.items():
            sums[k] = v if sums[k] is None else sums[k] + v

    means = {k: (v / take if v is not None else None) for k, v in sums.items()}
    zero = torch.zeros(())
    l2d_t = means["l_2d"] if means["l_2d"] is not None else zero
    l3d_t = means["l_3d"] if means["l_3d"] is not None else zero
    total_t = w.lambda1 * l2d_t + w.lambda2 * l3d_t

    f = lambda k: float(means[k].detach()) if means[k] is not None else 0.0
    l_img, l_tri, l_dep = f("l_3d_image"), f("l_3d_triplane"), f("l_3d_depth")
    l3d_f = l_img + l_tri + l_dep
    report = LossReport(
        l_2d=f("l_2d"),
        l_3d=l3d_f,
        l_3d_image=l_img,
        l_3d_triplane=l_tri,
        l_3d_depth=l_dep,
        total=w.lambda1 * f("l_2d") + w.lambda2 * l3d_f,
    )
    if not math.isfinite(float(total_t.detach())):
        raise TrainingDivergedError(state.step, report.to_json_dict())

    if total_t.grad_fn is not None:  # both lambdas zero leaves nothing to optimize
        state.opt.zero_grad(set_to_none=True)
        total_t.backward()
        torch.nn.utils.clip_grad_norm_(
            [p for p in state.model.parameters() if p.requires_grad], cfg.grad_clip
        )
        state.opt.step()
    state.step += 1
    return report


class _JsonlLog:
    def __init__(self, path):
        self.f = open(path, "a") if path is not None else None

    def write(self, step: int, report: LossReport):
        if self.f is None:
            return
        line = {"step": step, **report.to_json_dict()}
        self.f.write(json.dumps(line) + "\n")
        self.f.flush()

    def close(self):
        if self.f is not None:
            self.f.close()


def _run_loop(
    state: TrainState,
    dataset: EditDataset,
    records: list,
    steps: int,
    log_path,
    *,
    use_edit_path: bool,
) -> LossReport:
    if not records:
        raise ValidationError("no records to train on")
    log = _JsonlLog(log_path)
    report = None
    try:
        for _ in range(steps):
            report = train_step(state, dataset, records, use_edit_path=use_edit_path)
            log.write(state.step, report)
    finally:
        log.close()
    return report


def pretrain_reconstruction(
    state: TrainState, dataset: EditDataset, steps: int, log_path=None
) -> LossReport:
    """Warm up encoders, field decoder and upsampler on identity records."""
    set_policy(state, "pretrain")
    records = dataset.by_style("identity")
    return _run_loop(state, dataset, records, steps, log_path, use_edit_path=False)


def distill(
    state: TrainState, dataset: EditDataset, steps: int, log_path=None
) -> LossReport:
    """Main phase: only the prompt encoder and fusion decoder move."""
    set_policy(state, "distill")
    return _run_loop(state, dataset, records=dataset.records, steps=steps, log_path=log_path, use_edit_path=True)


@dataclass
class AdaptPair:
    input_image: torch.Tensor
    target_image: torch.Tensor
    prompt: Prompt
    input_pose: CameraPose


def pairs_from_records(records: list, dataset: EditDataset) -> list:
    return [
        AdaptPair(
            input_image=r.input_image,
            target_image=r.target_image,
            prompt=record_prompt(r, dataset),
            input_pose=r.input_pose,
        )
        for r in records
    ]


def adapt_image_loss(state: TrainState, pair: AdaptPair, *, mode: str = "eval", seed=None) -> torch.Tensor:
    tri = state.model.edit(pair.input_image, pair.prompt)
    r = student_render(
        state.model,
        tri,
        pair.input_pose,
        samples_per_ray=state.cfg.samples_per_ray if mode == "train" else state.cfg.model.samples_per_ray,
        mode=mode,
        seed=seed,
    )
    return image_loss(r.rgb_final, pair.target_image, state.perceptual, state.cfg.weights)


def adapt(
    state: TrainState,
    pairs: list,
    steps: int,
    *,
    heldout: list | None = None,
    log_path=None,
    align_embedder=None,
    progress_cb=None,
    curve_every: int = 0,
) -> dict:
    """Fast adaptation to a new style from a handful of image pairs.

    Tunes the prompt encoder and the fusion decoder's layer norms with a 2d
    objective over the pairs. If align_embedder is given, adds an embedding
    alignment term and records its name in the provenance list (metrics
    that score with the same embedder will then refuse to run).
    """
    if not pairs:
        raise ValidationError("adaptation needs at least one pair")
    set_policy(state, "adapt", lr=state.cfg.adapt_lr)
    if align_embedder is not None and align_embedder.name not in state.optimized_with_embedders:
        state.optimized_with_embedders.append(align_embedder.name)

    def heldout_loss() -> float:
        if not heldout:
            return float("nan")
        with torch.no_grad():
            vals = [float(adapt_image_loss(state, p, mode="eval")) for p in heldout]
        return sum(vals) / len(vals)

    t0 = time.perf_counter()
    step0 = heldout_loss()
    curve = [[0, step0]] if heldout else []
    log = _JsonlLog(log_path)
    try:
        for i in range(steps):
            step_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=state.gen))
            take = min(state.cfg.batch_size, len(pairs))
            idx = torch.randperm(len(pairs), generator=state.gen)[:take].tolist()
            total = torch.zeros(())
            for j, pi in enumerate(idx):
                total = total + adapt_image_loss(
                    state, pairs[pi], mode="train", seed=step_seed + 31 * j
                )
            if align_embedder is not None:
                p = pairs[idx[0]]
                tri = state.model.edit(p.input_image, p.prompt)
                r = student_render(
                    state.model, tri, p.input_pose,
                    samples_per_ray=state.cfg.samples_per_ray, mode="train", seed=step_seed,
                )
                total = total + (1.0 - align_embedder.cosine(r.rgb_final, p.target_image))
            total = total / len(idx)
            if not math.isfinite(float(total.detach())):
                raise TrainingDivergedError(state.step, {"adapt": float(total.detach())})
            state.opt.zero_grad(set_to_none=True)
            total.backward()
            torch.nn.utils.clip_grad_norm_(
                [p for p in state.model.parameters() if p.requires_grad],
                state.cfg.grad_clip,
            )
            state.opt.step()
            state.step += 1
            total_f = float(total.detach())
            log.write(state.step, LossReport(total_f, 0.0, 0.0, 0.0, 0.0, total_f))
            if curve_every and heldout and (i + 1) % curve_every == 0:
                curve.append([i + 1, heldout_loss()])
            if progress_cb is not None:
                progress_cb(i + 1, steps)
    finally:
        log.close()
    final = heldout_loss()
    if heldout and (not curve or curve[-1][0] != steps):
        curve.append([steps, final])
    return {
        "steps": steps,
        "heldout_loss_step0": step0,
        "heldout_loss_final": final,
        "heldout_curve": curve,
        "wall_time_s": time.perf_counter() - t0,
    }


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: TrainState):
    """Single-file format: `CKPT v1 <json_len>` line, manifest, float32 blob."""
    blob = bytearray()
    entries = []

    def push(t: torch.Tensor) -> int:
        off = len(blob)
        blob.extend(t.detach().cpu().contiguous().to(torch.float32).numpy().astype("<f4").tobytes())
        return off

    for name, t in state.model.state_dict().items():
        entries.append(
            {"name": name, "shape": list(t.shape), "dtype": "float32", "offset": push(t)}
        )

    name_of = {id(p): n for n, p in state.model.named_parameters()}
    opt_state = {}
    for p, s in state.opt.state.items():
        n = name_of.get(id(p))
        if n is None or "exp_avg" not in s:
            continue
        opt_state[n] = {
            "step": float(s["step"]),
            "exp_avg_offset": push(s["exp_avg"]),
            "exp_avg_sq_offset": push(s["exp_avg_sq"]),
        }

    rng = base64.b64encode(state.gen.get_state().numpy().tobytes()).decode("ascii")
    manifest = {
        "step": state.step,
        "policy": state.policy,
        "lr": state.lr,
        "params": entries,
        "optimizer": {"type": "adam", "state": opt_state},
        "config": config_to_dict(state.cfg),
        "rng_state": rng,
        "optimized_with_embedders": sorted(state.optimized_with_embedders),
    }
    payload = json.dumps(manifest, sort_keys=True).encode()
    header = f"{CKPT_MAGIC} {len(payload)}\n".encode("ascii")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(bytes(blob))
    os.replace(tmp, path)


def _read_checkpoint(path) -> tuple[dict, bytes]:
    try:
        with open(path, "rb") as f:
            header = f.readline().decode("ascii", errors="replace").strip()
            parts = header.split()
            if len(parts) != 3 or " ".join(parts[:2]) != CKPT_MAGIC:
                raise CheckpointError(f"bad checkpoint header: {header!r}")
            try:
                jlen = int(parts[2])
            except ValueError:
                raise CheckpointError(f"bad checkpoint header: {header!r}")
            manifest = json.loads(f.read(jlen).decode())
            blob = f.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"no checkpoint at {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint manifest: {e}") from e
    return manifest, blob


def _pull(blob: bytes, offset: int, shape: list) -> torch.Tensor:
    numel = int(np.prod(shape)) if shape else 1
    end = offset + numel * 4
    if end > len(blob):
        raise CheckpointError("checkpoint blob truncated")
    arr = np.frombuffer(blob, dtype="<f4", count=numel, offset=offset).reshape(shape)
    return torch.from_numpy(arr.copy())


def load_checkpoint(path) -> TrainState:
    manifest, blob = _read_checkpoint(path)
    try:
        cfg = train_config_from_dict(manifest["config"])
        state = make_state(cfg, policy=manifest["policy"], lr=manifest["lr"])
        sd = {e["name"]: _pull(blob, e["offset"], e["shape"]) for e in manifest["params"]}
        state.model.load_state_dict(sd, strict=True)

        rng_bytes = base64.b64decode(manifest["rng_state"])
        state.gen.set_state(torch.frombuffer(bytearray(rng_bytes), dtype=torch.uint8).clone())
        state.step = int(manifest["step"])
        state.optimized_with_embedders = list(manifest.get("optimized_with_embedders", []))

        params = dict(state.model.named_parameters())
        for name, s in manifest["optimizer"]["state"].items():
            p = params.get(name)
            if p is None or not p.requires_grad:
                continue
            state.opt.state[p] = {
                "step": torch.tensor(float(s["step"])),
                "exp_avg": _pull(blob, s["exp_avg_offset"], list(p.shape)),
                "exp_avg_sq": _pull(blob, s["exp_avg_sq_offset"], list(p.shape)),
            }
    except (KeyError, ValidationError, RuntimeError) as e:
        raise CheckpointError(f"cannot restore checkpoint: {e}") from e
    return state


def params_hash(model: EditorModel) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().to(torch.float32).numpy().astype("<f4").tobytes())
    return h.hexdigest()
