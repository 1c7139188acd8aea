"""Differentiable volume rendering of a triplane, plus the image upsampler.

Emission-absorption quadrature with per-bin weights: samples live one per
stratified bin on [t_near, t_far], alpha_i = 1 - exp(-sigma_i * delta_i)
with delta_i the bin width, w_i = alpha_i * prod_{j<i}(1 - alpha_j).
Density is zeroed outside the triplane extent cube so empty space renders
black; the background is composited as black. Depth is the weight-averaged
sample distance, reported as 0 where accumulated weight <= 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .cameras import CameraPose, generate_rays
from .errors import ValidationError
from .triplane import FieldDecoder, Triplane, decode_field, sample_triplane

DEPTH_MAGIC = "DEPTH v1"
ACC_EPS = 1e-3


@dataclass
class RenderOutput:
    rgb_low: torch.Tensor  # [h,w,3] in [0,1]
    feat_low: torch.Tensor  # [h,w,E] upsampler features
    depth: torch.Tensor  # [h,w] world units; 0 where acc <= 1e-3
    acc: torch.Tensor  # [h,w] accumulated weight in [0,1]
    t_near: float
    t_far: float
    rgb_final: torch.Tensor | None = None  # [H,W,3], set by render_full


def sample_depths(
    n_rays: int,
    t_near: float,
    t_far: float,
    samples_per_ray: int,
    mode: str = "eval",
    seed: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-ray sample distances [n_rays, S] and shared bin widths [S].

    `eval` uses bin midpoints (deterministic); `train` jitters uniformly
    inside each bin with a caller-supplied seed.
    """
    if samples_per_ray < 2:
        raise ValidationError("samples_per_ray must be >= 2")
    if mode not in ("eval", "train"):
        raise ValidationError(f"unknown sampling mode {mode!r}")
    edges = torch.linspace(t_near, t_far, samples_per_ray + 1, dtype=dtype)
    deltas = edges[1:] - edges[:-1]
    if mode == "eval":
        mids = 0.5 * (edges[:-1] + edges[1:])
        t = mids.expand(n_rays, samples_per_ray)
    else:
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        u = torch.rand(n_rays, samples_per_ray, generator=gen).to(dtype)
        t = edges[:-1] + u * deltas
    return t, deltas


def render_rays(
    t: Triplane,
    decoder: FieldDecoder,
    origins: torch.Tensor,
    directions: torch.Tensor,
    t_near: float,
    t_far: float,
    samples_per_ray: int,
    mode: str = "eval",
    seed: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Core quadrature over flat ray arrays. Returns (rgb [N,3], feat [N,E], depth [N], acc [N])."""
    n = origins.shape[0]
    dtype = t.planes.dtype
    ts, deltas = sample_depths(n, t_near, t_far, samples_per_ray, mode, seed, dtype)
    pts = origins[:, None, :].to(dtype) + ts[..., None] * directions[:, None, :].to(dtype)
    flat = pts.reshape(-1, 3)
    sample = decode_field(sample_triplane(t, flat), decoder)
    inside = (flat.abs() <= t.extent).all(dim=-1).to(dtype)
    sigma = (sample.density * inside).reshape(n, samples_per_ray)
    color = sample.color_feature.reshape(n, samples_per_ray, -1)

    alpha = 1.0 - torch.exp(-sigma * deltas)
    trans = torch.cumprod(
        torch.cat([torch.ones(n, 1, dtype=dtype), 1.0 - alpha[:, :-1]], dim=1), dim=1
    )
    weights = alpha * trans  # [N,S]
    acc = weights.sum(dim=1)
    rgbf = (weights[..., None] * color).sum(dim=1)
    depth_raw = (weights * ts).sum(dim=1) / acc.clamp_min(1e-8)
    depth = torch.where(acc > ACC_EPS, depth_raw, torch.zeros_like(depth_raw))
    return rgbf[:, :3], rgbf[:, 3:], depth, acc


def volume_render(
    t: Triplane,
    decoder: FieldDecoder,
    pose: CameraPose,
    h: int,
    w: int,
    samples_per_ray: int,
    mode: str = "eval",
    seed: int | None = None,
) -> RenderOutput:
    """Render one camera view at (h, w); rgb_final stays unset."""
    if samples_per_ray < 2:
        raise ValidationError("samples_per_ray must be >= 2")
    rays = generate_rays(pose, h, w, dtype=t.planes.dtype)
    rgb, feat, depth, acc = render_rays(
        t,
        decoder,
        rays.origins.reshape(-1, 3),
        rays.directions.reshape(-1, 3),
        rays.t_near,
        rays.t_far,
        samples_per_ray,
        mode,
        seed,
    )
    e = feat.shape[-1]
    return RenderOutput(
        rgb_low=rgb.reshape(h, w, 3),
        feat_low=feat.reshape(h, w, e),
        depth=depth.reshape(h, w),
        acc=acc.reshape(h, w),
        t_near=rays.t_near,
        t_far=rays.t_far,
    )


class Upsampler(nn.Module):
    """2x (configurable integer) upsampler applied to the low-res render.

    The base path is nearest-neighbor upsampling of rgb_low carried through
    a logit/sigmoid pair; a conv residual over (rgb, features) is added in
    logit space. The residual output conv is zero-initialized, so a fresh
    upsampler reproduces nearest-neighbor upsampling exactly.
    """

    def __init__(self, n_features: int = 4, hidden: int = 16, factor: int = 2, dtype: torch.dtype = torch.float32):
        super().__init__()
        if factor < 1:
            raise ValidationError("upsample factor must be >= 1")
        self.factor = factor
        self.conv1 = nn.Conv2d(3 + n_features, hidden, 3, padding=1, dtype=dtype)
        self.conv2 = nn.Conv2d(hidden, 3, 3, padding=1, dtype=dtype)
        with torch.no_grad():
            self.conv2.weight.zero_()
            self.conv2.bias.zero_()

    def forward(self, rgb_low: torch.Tensor, feat_low: torch.Tensor) -> torch.Tensor:
        if rgb_low.ndim != 3 or rgb_low.shape[-1] != 3:
            raise ValidationError(f"rgb_low must be [h,w,3], got {tuple(rgb_low.shape)}")
        if feat_low.shape[:2] != rgb_low.shape[:2]:
            raise ValidationError("rgb_low and feat_low spatial shapes differ")
        x = torch.cat([rgb_low, feat_low], dim=-1).permute(2, 0, 1).unsqueeze(0)
        hid = F.leaky_relu(self.conv1(x), 0.2)
        hid = F.interpolate(hid, scale_factor=self.factor, mode="nearest")
        residual = self.conv2(hid)
        base = rgb_low.permute(2, 0, 1).unsqueeze(0)
        base = F.interpolate(base, scale_factor=self.factor, mode="nearest")
        logit = torch.log(base.clamp(1e-6, 1 - 1e-6)) - torch.log1p(-base.clamp(1e-6, 1 - 1e-6))
        out = torch.sigmoid(logit + residual)
        return out.squeeze(0).permute(1, 2, 0)


def upsample(rgb_low: torch.Tensor, feat_low: torch.Tensor, upsampler: Upsampler) -> torch.Tensor:
    """Low-res render -> final image in [0,1]. Deterministic."""
    return upsampler(rgb_low, feat_low)


def render_full(
    t: Triplane,
    decoder: FieldDecoder,
    upsampler: Upsampler,
    pose: CameraPose,
    final_h: int,
    final_w: int,
    samples_per_ray: int = 48,
    mode: str = "eval",
    seed: int | None = None,
) -> RenderOutput:
    """Low-res volume render followed by the upsampler.

    `pose` carries intrinsics for the final (final_h, final_w) resolution;
    the low-res pass rescales them by 1/factor.
    """
    k = upsampler.factor
    if final_h % k or final_w % k:
        raise ValidationError(f"final size must be a multiple of the upsample factor {k}")
    out = volume_render(t, decoder, pose.rescale(1.0 / k), final_h // k, final_w // k, samples_per_ray, mode, seed)
    out.rgb_final = upsample(out.rgb_low, out.feat_low, upsampler)
    return out


def save_png(img: torch.Tensor, path):
    """[H,W,3] float in [0,1] -> 8-bit PNG."""
    arr = (img.detach().cpu().clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def png_bytes(img: torch.Tensor) -> bytes:
    import io as _io

    arr = (img.detach().cpu().clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    buf = _io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def load_png(path_or_bytes) -> torch.Tensor:
    """8-bit PNG -> [H,W,3] float32 in [0,1]."""
    import io as _io

    src = _io.BytesIO(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else path_or_bytes
    with Image.open(src) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def save_depth(depth: torch.Tensor, path):
    """Text header `DEPTH v1 h w` followed by little-endian float32 values."""
    if depth.ndim != 2:
        raise ValidationError("depth must be [h,w]")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(f"{DEPTH_MAGIC} {h} {w}\n".encode("ascii"))
        f.write(depth.detach().cpu().numpy().astype("<f4").tobytes())


def depth_bytes(depth: torch.Tensor) -> bytes:
    h, w = depth.shape
    return f"{DEPTH_MAGIC} {h} {w}\n".encode("ascii") + depth.detach().cpu().numpy().astype("<f4").tobytes()


def load_depth(path) -> torch.Tensor:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != DEPTH_MAGIC:
            raise ValidationError(f"bad depth header: {header!r}")
        h, w = int(parts[2]), int(parts[3])
        blob = f.read()
    if len(blob) != h * w * 4:
        raise ValidationError("depth payload size mismatch")
    return torch.from_numpy(np.frombuffer(blob, dtype="<f4").reshape(h, w).copy())
