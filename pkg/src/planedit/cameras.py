"""Camera poses and per-pixel ray generation.

Convention (used consistently everywhere in this package): right-handed
world coordinates with +z up, and the camera looks down its own -z axis.
The camera-to-world matrix columns are (right, up, backward); pixel (i, j)
refers to row i (top to bottom) and column j (left to right), and the ray
for a pixel passes through that pixel's center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch

from .errors import ValidationError

ORTHONORMAL_TOL = 1e-6


@dataclass
class CameraPose:
    """Extrinsic pose plus pinhole intrinsics (focal / principal point in pixels)."""

    cam_to_world: torch.Tensor  # [4,4] float64
    focal: float
    cx: float
    cy: float
    near: float
    far: float

    def __post_init__(self):
        self.cam_to_world = torch.as_tensor(self.cam_to_world, dtype=torch.float64)

    def validate(self):
        m = self.cam_to_world
        if m.shape != (4, 4):
            raise ValidationError(f"cam_to_world must be 4x4, got {tuple(m.shape)}")
        if not torch.isfinite(m).all():
            raise ValidationError("cam_to_world contains non-finite entries")
        r = m[:3, :3]
        resid = (r.T @ r - torch.eye(3, dtype=m.dtype)).abs().max().item()
        if resid > ORTHONORMAL_TOL:
            raise ValidationError(f"rotation block not orthonormal (residual {resid:.2e})")
        if torch.det(r).item() < 0:
            raise ValidationError("rotation block has negative determinant")
        if not torch.equal(m[3], torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=m.dtype)):
            raise ValidationError("bottom row must be exactly (0, 0, 0, 1)")
        if not (self.near > 0 and self.far > self.near):
            raise ValidationError(f"need 0 < near < far, got near={self.near}, far={self.far}")

    @property
    def center(self) -> torch.Tensor:
        return self.cam_to_world[:3, 3]

    @property
    def forward_axis(self) -> torch.Tensor:
        """World-space viewing direction (camera -z)."""
        return -self.cam_to_world[:3, 2]

    def rescale(self, factor: float) -> "CameraPose":
        """Same pose with intrinsics scaled for a resized image (focal, cx, cy in pixels)."""
        return CameraPose(
            cam_to_world=self.cam_to_world.clone(),
            focal=self.focal * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            near=self.near,
            far=self.far,
        )

    def to_json_dict(self) -> dict:
        return {
            "cam_to_world": [[float(v) for v in row] for row in self.cam_to_world],
            "focal": float(self.focal),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "near": float(self.near),
            "far": float(self.far),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CameraPose":
        try:
            return cls(
                cam_to_world=torch.tensor(d["cam_to_world"], dtype=torch.float64),
                focal=float(d["focal"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                near=float(d["near"]),
                far=float(d["far"]),
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed pose record: {e}") from e

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "CameraPose":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


@dataclass
class RayBundle:
    """Per-pixel rays for one camera: shared origin, unit directions."""

    origins: torch.Tensor  # [H,W,3]
    directions: torch.Tensor  # [H,W,3]
    t_near: float
    t_far: float


def generate_rays(pose: CameraPose, height: int, width: int, dtype: torch.dtype = torch.float32) -> RayBundle:
    """One ray per pixel, through the pixel center. Deterministic."""
    if height < 1 or width < 1:
        raise ValidationError("height and width must be >= 1")
    pose.validate()
    m = pose.cam_to_world.to(dtype)
    jj, ii = torch.meshgrid(
        torch.arange(width, dtype=dtype),
        torch.arange(height, dtype=dtype),
        indexing="xy",
    )
    # Camera space: x right, y up, looking down -z. Image rows grow downward.
    dirs_cam = torch.stack(
        [
            (jj + 0.5 - pose.cx) / pose.focal,
            -(ii + 0.5 - pose.cy) / pose.focal,
            -torch.ones_like(jj),
        ],
        dim=-1,
    )
    dirs_world = dirs_cam @ m[:3, :3].T
    dirs_world = dirs_world / dirs_world.norm(dim=-1, keepdim=True)
    origins = m[:3, 3].expand(height, width, 3).contiguous()
    return RayBundle(origins=origins, directions=dirs_world, t_near=pose.near, t_far=pose.far)


def _look_at_matrix(center: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Camera-to-world rotation+translation for a camera at `center` looking at `target`."""
    forward = target - center
    norm = forward.norm()
    if norm < 1e-12:
        raise ValidationError("camera center coincides with look_at target")
    forward = forward / norm
    world_up = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    right = torch.linalg.cross(forward, world_up)
    if right.norm() < 1e-9:
        raise ValidationError("viewing direction parallel to world up; pose undefined")
    right = right / right.norm()
    up = torch.linalg.cross(right, forward)
    m = torch.eye(4, dtype=torch.float64)
    m[:3, 0] = right
    m[:3, 1] = up
    m[:3, 2] = -forward  # camera +z points backward
    m[:3, 3] = center
    return m


def pose_from_angles(
    azimuth_deg: float,
    elevation_deg: float,
    radius: float,
    look_at=(0.0, 0.0, 0.0),
    *,
    image_res: int = 64,
    fov_scale: float = 1.6,
    near: float | None = None,
    far: float | None = None,
) -> CameraPose:
    """Camera on a sphere around `look_at`, optical axis through the target.

    Azimuth 0 puts the camera on the +x side; elevation lifts it toward +z.
    Default near/far leave margin so the [-1,1]^3 scene cube is inside [near, far].
    """
    if radius <= 0:
        raise ValidationError("radius must be > 0")
    if abs(elevation_deg) >= 90:
        raise ValidationError("elevation must be in (-90, 90)")
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    target = torch.as_tensor(look_at, dtype=torch.float64)
    center = target + radius * torch.tensor(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)],
        dtype=torch.float64,
    )
    margin = math.sqrt(3.0) + 0.07  # cube circumradius plus slack
    pose = CameraPose(
        cam_to_world=_look_at_matrix(center, target),
        focal=fov_scale * image_res,
        cx=image_res / 2.0,
        cy=image_res / 2.0,
        near=near if near is not None else max(radius - margin, 1e-3),
        far=far if far is not None else radius + margin,
    )
    pose.validate()
    return pose


def sample_camera_ring(
    n: int,
    radius: float,
    elevation_deg: float = 0.0,
    look_at=(0.0, 0.0, 0.0),
    *,
    azimuth_offset_deg: float = 0.0,
    image_res: int = 64,
    fov_scale: float = 1.6,
    near: float | None = None,
    far: float | None = None,
) -> list[CameraPose]:
    """`n` poses evenly spaced in azimuth on a ring around `look_at`."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if radius <= 0:
        raise ValidationError("radius must be > 0")
    return [
        pose_from_angles(
            azimuth_offset_deg + 360.0 * k / n,
            elevation_deg,
            radius,
            look_at,
            image_res=image_res,
            fov_scale=fov_scale,
            near=near,
            far=far,
        )
        for k in range(n)
    ]
