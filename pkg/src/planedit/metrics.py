"""Evaluation: identity preservation, prompt alignment, 3d consistency, speed.

The embedders are frozen random-projection conv nets, one per role
("identity" and "prompt_space"). They keep the cosine-similarity interface
of the full-scale models, so every metric law is testable here, but the
absolute values are not comparable to scores from learned embedders; the
report carries that caveat in its note field.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .cameras import CameraPose
from .errors import ValidationError
from .network import EditorModel, Prompt, tokenize_text
from .renderer import Upsampler, render_full
from .triplane import FieldDecoder, Triplane

REPORT_NOTE = (
    "metrics computed with frozen random-projection embedders; "
    "values are internally comparable only"
)


class EmbeddingModel(nn.Module):
    """Deterministic image -> unit vector embedder.

    kind is "identity" (face-identity stand-in) or "prompt_space" (shared
    image/exemplar space stand-in); the two use different seeds so their
    spaces are unrelated.
    """

    KINDS = ("identity", "prompt_space")

    def __init__(self, kind: str = "identity", seed: int = 11, dim: int = 32):
        super().__init__()
        if kind not in self.KINDS:
            raise ValidationError(f"unknown embedder kind {kind!r}")
        self.kind = kind
        self.seed = seed
        self.dim = dim
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(3, 16, 3, stride=2, padding=1),
                nn.Conv2d(16, 32, 3, stride=2, padding=1),
                nn.Conv2d(32, 32, 3, stride=2, padding=1),
            ]
        )
        self.proj = nn.Linear(32 * 16, dim, bias=False)
        gen = torch.Generator().manual_seed(seed + (0 if kind == "identity" else 5000))
        with torch.no_grad():
            for c in self.convs:
                c.weight.normal_(0.0, 0.2, generator=gen)
                c.bias.zero_()
            self.proj.weight.normal_(0.0, 0.1, generator=gen)
        for p in self.parameters():
            p.requires_grad_(False)

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.seed}"

    def embed(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValidationError(f"image must be [H,W,3], got {tuple(img.shape)}")
        x = img.permute(2, 0, 1).unsqueeze(0)
        for c in self.convs:
            x = F.leaky_relu(c(x), 0.2)
        x = F.adaptive_avg_pool2d(x, 4).flatten(1)
        v = self.proj(x).squeeze(0)
        return v / v.norm().clamp_min(1e-12)

    def cosine(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Differentiable cosine between two image embeddings."""
        return (self.embed(a) * self.embed(b)).sum()


def cosine(u: torch.Tensor, v: torch.Tensor) -> float:
    """Plain vector cosine; the metric laws are stated against this."""
    u = u.flatten().double()
    v = v.flatten().double()
    nu, nv = u.norm(), v.norm()
    if nu == 0 or nv == 0:
        raise ValidationError("cosine undefined for zero vectors")
    return float((u @ v) / (nu * nv))


def id_t(input_image: torch.Tensor, edited_image: torch.Tensor, m: EmbeddingModel) -> float:
    if input_image.shape != edited_image.shape:
        raise ValidationError("id_t images must share a resolution")
    return cosine(m.embed(input_image), m.embed(edited_image))


class PromptRegistry:
    """Maps tokenized prompt text to the style exemplar image.

    Registered at dataset build time; lets text prompts and images meet in
    one embedding space for the alignment metric.
    """

    def __init__(self, max_text_len: int = 64):
        self.max_text_len = max_text_len
        self._items = {}

    def _key(self, text: str) -> tuple:
        return tuple(tokenize_text(text, self.max_text_len).tolist())

    def register(self, text: str, exemplar: torch.Tensor):
        self._items[self._key(text)] = exemplar

    def lookup(self, text: str) -> torch.Tensor:
        key = self._key(text)
        if key not in self._items:
            raise ValidationError(f"no exemplar registered for prompt {text!r}")
        return self._items[key]

    @staticmethod
    def from_dataset(dataset) -> "PromptRegistry":
        reg = PromptRegistry()
        for name, style in dataset.styles.items():
            if name in dataset.exemplars:
                reg.register(style.text, dataset.exemplars[name])
        return reg


def clip_r(
    edited: torch.Tensor,
    prompt: Prompt,
    m: EmbeddingModel,
    registry: PromptRegistry | None = None,
    provenance: tuple = (),
) -> float:
    """Prompt-alignment cosine in the shared stand-in space.

    Refuses to score models whose training optimized through this same
    embedder (the provenance list comes from the checkpoint).
    """
    if m.name in provenance:
        raise ValidationError(
            f"clip_r refused: model was optimized with embedder {m.name}"
        )
    if prompt.kind == "image":
        exemplar = prompt.image
    else:
        if registry is None:
            raise ValidationError("text prompts need an exemplar registry")
        exemplar = registry.lookup(prompt.text)
    return cosine(m.embed(edited), m.embed(exemplar))


def consistency_3d(
    t: Triplane,
    decoder: FieldDecoder,
    upsampler: Upsampler,
    poses: list,
    m: EmbeddingModel,
    *,
    image_res: int = 64,
    samples_per_ray: int = 48,
) -> float:
    """Mean pairwise identity cosine over rendered views of one triplane."""
    if len(poses) < 2:
        raise ValidationError("consistency_3d needs at least 2 poses")
    embs = []
    with torch.no_grad():
        for p in poses:
            out = render_full(t, decoder, upsampler, p, image_res, image_res, samples_per_ray)
            embs.append(m.embed(out.rgb_final))
    vals = [
        cosine(embs[i], embs[j]) for i in range(len(embs)) for j in range(i + 1, len(embs))
    ]
    return sum(vals) / len(vals)


def time_inference(
    model: EditorModel,
    sample: tuple,
    n: int = 100,
    warmup: int = 5,
) -> tuple[float, float, float]:
    """Wall-clock of edit()+render over n runs, in ms: (mean, p50, p95)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    image, prompt, pose = sample
    r = model.cfg.image_res
    times = []
    with torch.no_grad():
        for i in range(warmup + n):
            t0 = time.perf_counter()
            tri = model.edit(image, prompt)
            render_full(
                tri, model.decoder_mlp, model.upsampler, pose, r, r, model.cfg.samples_per_ray
            )
            dt = (time.perf_counter() - t0) * 1000.0
            if i >= warmup:
                times.append(dt)
    arr = np.asarray(times)
    return float(arr.mean()), float(np.percentile(arr, 50)), float(np.percentile(arr, 95))


@dataclass
class EvalReport:
    id_t: float
    clip_r: float | None  # None when the provenance gate refused it
    consistency_3d: float
    time_ms_mean: float
    time_ms_p50: float
    time_ms_p95: float
    n_samples: int
    note: str = REPORT_NOTE

    def validate(self) -> "EvalReport":
        for name in ("id_t", "consistency_3d"):
            v = getattr(self, name)
            if not (-1.0 - 1e-9 <= v <= 1.0 + 1e-9):
                raise ValidationError(f"{name} out of [-1,1]: {v}")
        if self.clip_r is not None and not (-1.0 - 1e-9 <= self.clip_r <= 1.0 + 1e-9):
            raise ValidationError(f"clip_r out of [-1,1]: {self.clip_r}")
        for name in ("time_ms_mean", "time_ms_p50", "time_ms_p95"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        return self

    def to_json_dict(self) -> dict:
        return {
            "id_t": self.id_t,
            "clip_r": self.clip_r,
            "consistency_3d": self.consistency_3d,
            "time_ms_mean": self.time_ms_mean,
            "time_ms_p50": self.time_ms_p50,
            "time_ms_p95": self.time_ms_p95,
            "n_samples": self.n_samples,
            "note": self.note,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def evaluate(
    state,
    dataset,
    *,
    n_time: int = 100,
    consistency_records: int = 2,
    id_embedder: EmbeddingModel | None = None,
    prompt_embedder: EmbeddingModel | None = None,
) -> EvalReport:
    """Score a trained state on a dataset; returns the aggregate report."""
    from .training import record_prompt, student_render  # cycle-free at call time

    model = state.model
    mcfg = model.cfg
    m_id = id_embedder or EmbeddingModel("identity")
    m_p = prompt_embedder or EmbeddingModel("prompt_space")
    registry = PromptRegistry.from_dataset(dataset)

    id_vals, clip_vals = [], []
    clip_refused = False
    cons_vals = []
    with torch.no_grad():
        for i, rec in enumerate(dataset.records):
            prompt = record_prompt(rec, dataset)
            tri = model.edit(rec.input_image, prompt)
            out = student_render(
                model, tri, rec.input_pose, samples_per_ray=mcfg.samples_per_ray
            )
            id_vals.append(id_t(rec.input_image, out.rgb_final, m_id))
            try:
                clip_vals.append(
                    clip_r(
                        out.rgb_final,
                        prompt,
                        m_p,
                        registry,
                        tuple(state.optimized_with_embedders),
                    )
                )
            except ValidationError:
                clip_refused = True
            if i < consistency_records:
                cons_vals.append(
                    consistency_3d(
                        tri,
                        model.decoder_mlp,
                        model.upsampler,
                        rec.ring_poses,
                        m_id,
                        image_res=mcfg.image_res,
                        samples_per_ray=mcfg.samples_per_ray,
                    )
                )

    rec = dataset.records[0]
    sample = (rec.input_image, record_prompt(rec, dataset), rec.input_pose)
    mean, p50, p95 = time_inference(model, sample, n=n_time)
    report = EvalReport(
        id_t=sum(id_vals) / len(id_vals),
        clip_r=(None if clip_refused or not clip_vals else sum(clip_vals) / len(clip_vals)),
        consistency_3d=sum(cons_vals) / len(cons_vals),
        time_ms_mean=mean,
        time_ms_p50=p50,
        time_ms_p95=p95,
        n_samples=len(dataset.records),
    )
    return report.validate()
