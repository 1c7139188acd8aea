"""Triplane 3D field: three axis-aligned feature planes plus a point decoder.

A point's feature is the SUM of bilinear samples from the XY, XZ and YZ
planes (clamp-to-edge beyond the extent). A small skip-connected MLP maps
features to density (softplus) and a color feature vector whose first
three channels are RGB (sigmoid); remaining channels are unconstrained and
feed the upsampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError

TRIPLANE_MAGIC = "TRIPLANE v1"


@dataclass
class Triplane:
    """planes: [3, C, R, R] feature planes in order XY, XZ, YZ."""

    planes: torch.Tensor
    extent: float = 1.0

    @property
    def channels(self) -> int:
        return int(self.planes.shape[1])

    @property
    def resolution(self) -> int:
        return int(self.planes.shape[2])

    def validate(self):
        p = self.planes
        if p.ndim != 4 or p.shape[0] != 3 or p.shape[2] != p.shape[3]:
            raise ValidationError(f"planes must be [3,C,R,R], got {tuple(p.shape)}")
        if p.shape[2] < 2:
            raise ValidationError("plane resolution must be >= 2")
        if not torch.isfinite(p).all():
            raise ValidationError("planes contain non-finite entries")
        if self.extent <= 0:
            raise ValidationError("extent must be > 0")


@dataclass
class FieldSample:
    """Decoded field values for a batch of points."""

    density: torch.Tensor  # [N], >= 0
    color_feature: torch.Tensor  # [N, 3+E]; channels 0:3 are RGB in [0,1]


def sample_triplane(t: Triplane, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample all three planes at `points` [N,3] and sum. Returns [N,C]."""
    t.validate()
    if points.ndim != 2 or points.shape[-1] != 3:
        raise ValidationError(f"points must be [N,3], got {tuple(points.shape)}")
    n = points.shape[0]
    if n == 0:
        return torch.zeros(0, t.channels, dtype=t.planes.dtype)
    if not torch.isfinite(points).all():
        raise ValidationError("points contain non-finite entries")
    pts = points.to(t.planes.dtype) / t.extent
    # (u, v) pairs per plane; u indexes plane width, v plane height.
    grid = torch.stack(
        [
            torch.stack([pts[:, 0], pts[:, 1]], dim=-1),  # XY
            torch.stack([pts[:, 0], pts[:, 2]], dim=-1),  # XZ
            torch.stack([pts[:, 1], pts[:, 2]], dim=-1),  # YZ
        ],
        dim=0,
    ).unsqueeze(2)  # [3, N, 1, 2]
    out = F.grid_sample(t.planes, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return out[:, :, :, 0].sum(dim=0).transpose(0, 1)  # [N, C]


class FieldDecoder(nn.Module):
    """Skip-connected point decoder: raw = skip(f) + w2 tanh(w1 f + b1) + b2.

    Output layout: [density_raw, rgb_raw(3), extra(E)]. The linear skip path
    lets the decoder represent an exact channel pass-through, which is how
    the canonical (teacher-space) decoder is constructed.
    """

    def __init__(self, channels: int, hidden: int = 16, n_extra: int = 4, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.channels = channels
        self.n_extra = n_extra
        out = 4 + n_extra
        self.skip = nn.Linear(channels, out, bias=False, dtype=dtype)
        self.fc1 = nn.Linear(channels, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, out, dtype=dtype)

    def raw_forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.skip(features) + self.fc2(torch.tanh(self.fc1(features)))

    def forward(self, features: torch.Tensor) -> FieldSample:
        raw = self.raw_forward(features)
        density = F.softplus(raw[:, 0])
        rgb = torch.sigmoid(raw[:, 1:4])
        color_feature = torch.cat([rgb, raw[:, 4:]], dim=1)
        return FieldSample(density=density, color_feature=color_feature)


def decode_field(features: torch.Tensor, decoder: FieldDecoder) -> FieldSample:
    """Decode per-point features to density + color feature. Deterministic."""
    if features.ndim != 2 or features.shape[1] != decoder.channels:
        raise ValidationError(
            f"features must be [N,{decoder.channels}], got {tuple(features.shape)}"
        )
    return decoder(features)


def canonical_field_decoder(
    channels: int, hidden: int = 16, n_extra: int = 4, dtype: torch.dtype = torch.float32
) -> FieldDecoder:
    """Decoder whose initial map is an exact channel pass-through.

    Channel 0 carries raw density, 1:4 raw RGB, 4:4+E the extra features.
    The nonlinear branch is zeroed (fc2 = 0) so teacher-space triplanes fit
    against this decoder stay interpretable; the branch remains trainable.
    """
    if channels < 4 + n_extra:
        raise ValidationError(f"need at least {4 + n_extra} channels, got {channels}")
    dec = FieldDecoder(channels, hidden=hidden, n_extra=n_extra, dtype=dtype)
    with torch.no_grad():
        dec.skip.weight.zero_()
        for row in range(4 + n_extra):
            dec.skip.weight[row, row] = 1.0
        g = torch.Generator().manual_seed(101)
        dec.fc1.weight.copy_(torch.randn(dec.fc1.weight.shape, generator=g, dtype=torch.float64).to(dtype) * 0.2)
        dec.fc1.bias.zero_()
        dec.fc2.weight.zero_()
        dec.fc2.bias.zero_()
    return dec


def softplus_inverse(y: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.expm1(y))


def save_triplane(t: Triplane, path):
    """Text header `TRIPLANE v1 C R extent` followed by little-endian float32 planes."""
    t.validate()
    header = f"{TRIPLANE_MAGIC} {t.channels} {t.resolution} {t.extent}\n"
    data = t.planes.detach().cpu().numpy().astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data)


def load_triplane(path) -> Triplane:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 5 or " ".join(parts[:2]) != TRIPLANE_MAGIC:
            raise ValidationError(f"bad triplane header: {header!r}")
        channels, res = int(parts[2]), int(parts[3])
        extent = float(parts[4])
        blob = f.read()
    expected = 3 * channels * res * res * 4
    if len(blob) != expected:
        raise ValidationError(f"triplane payload has {len(blob)} bytes, expected {expected}")
    arr = np.frombuffer(blob, dtype="<f4").reshape(3, channels, res, res).copy()
    t = Triplane(planes=torch.from_numpy(arr), extent=extent)
    t.validate()
    return t


def fit_triplane_to_scene(
    scene,
    resolution: int,
    *,
    channels: int = 16,
    n_extra: int = 4,
    extent: float = 1.0,
    grid_n: int = 24,
    steps: int = 400,
    lr: float = 3e-2,
    seed: int = 0,
) -> Triplane:
    """Fit a canonical-space triplane to an analytic scene field.

    Nonlinear least squares on a fixed jittered point grid: density is fit
    in log1p space through the softplus activation, colors through sigmoid
    weighted by local presence. Deterministic for a given seed.
    `scene` must expose `field(points [N,3]) -> (sigma [N], rgb [N,3])`.
    """
    if resolution < 2:
        raise ValidationError("resolution must be >= 2")
    if grid_n < 2:
        raise ValidationError("grid_n must be >= 2")
    gen = torch.Generator().manual_seed(seed)
    cell = 2.0 * extent / grid_n
    centers = -extent + (torch.arange(grid_n, dtype=torch.float32) + 0.5) * cell
    gx, gy, gz = torch.meshgrid(centers, centers, centers, indexing="ij")
    pts = torch.stack([gx, gy, gz], dim=-1).reshape(-1, 3)
    pts = pts + (torch.rand(pts.shape, generator=gen) - 0.5) * 0.9 * cell

    with torch.no_grad():
        sigma_t, rgb_t = scene.field(pts)
    sigma_t = sigma_t.clamp_min(1e-4)
    log_sigma_t = torch.log1p(sigma_t)
    presence = sigma_t / (sigma_t + 1.0)

    planes = torch.zeros(3, channels, resolution, resolution)
    planes[:, 0] = float(softplus_inverse(torch.tensor(1e-4))) / 3.0
    planes.requires_grad_(True)
    opt = torch.optim.Adam([planes], lr=lr)
    tri = Triplane(planes=planes, extent=extent)
    for _ in range(steps):
        opt.zero_grad()
        feats = sample_triplane(tri, pts)
        loss = ((torch.log1p(F.softplus(feats[:, 0])) - log_sigma_t) ** 2).mean()
        loss = loss + (presence[:, None] * (torch.sigmoid(feats[:, 1:4]) - rgb_t) ** 2).mean()
        if n_extra > 0:
            loss = loss + 0.01 * (feats[:, 4 : 4 + n_extra] ** 2).mean()
        # keep unused capacity small; channel 0 may go deeply negative for empty space
        loss = loss + 1e-5 * (planes[:, 1:] ** 2).mean()
        loss.backward()
        opt.step()
    return Triplane(planes=planes.detach(), extent=extent)
