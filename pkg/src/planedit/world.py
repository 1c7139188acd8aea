"""Procedural portrait-like scenes, color edit styles, and teacher targets.

Scenes are unions of soft primitives (ellipsoids and boxes) with densities
sigma0 * sigmoid((1 - q) / tau), where q is a normalized distance to the
primitive surface. Colors are density-weighted mixtures of primitive colors,
so a whole scene exposes the same field(points) -> (sigma, rgb) interface
the renderer needs.

Edit styles are affine color maps rgb -> A rgb + b constructed so that the
unit color cube stays inside itself. That makes editing commute with
rendering: rendering an edited scene equals applying the affine map to the
rendered image, with no clamping anywhere. The training roster uses linear
styles (b = 0), which also preserve the black background.

The teacher side fits a triplane to an (edited) scene and renders reference
views and depths analytically; build_dataset writes the resulting records
to disk in a deterministic layout.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .cameras import CameraPose, generate_rays, pose_from_angles, sample_camera_ring
from .config import ModelConfig
from .errors import ValidationError
from .renderer import ACC_EPS, load_depth, load_png, save_depth, save_png
from .triplane import Triplane, fit_triplane_to_scene, load_triplane, save_triplane

LUMA = np.array([0.299, 0.587, 0.114])

FULL_SCALE_STYLES = 20
FULL_SCALE_PAIRS_PER_STYLE = 1000
FULL_SCALE_TOTAL_PAIRS = FULL_SCALE_STYLES * FULL_SCALE_PAIRS_PER_STYLE


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Primitive:
    kind: str  # "ellipsoid" | "box"
    center: np.ndarray  # [3]
    radii: np.ndarray  # [3]
    color: np.ndarray  # [3] in [0,1]
    sigma0: float
    tau: float

    def validate(self):
        if self.kind not in ("ellipsoid", "box"):
            raise ValidationError(f"unknown primitive kind {self.kind!r}")
        if self.sigma0 <= 0 or self.tau <= 0:
            raise ValidationError("sigma0 and tau must be positive")
        if np.any(self.radii <= 0):
            raise ValidationError("radii must be positive")


@dataclass
class SyntheticScene:
    seed: int
    primitives: list
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    style_id: str = "identity"

    def field(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Density [N] and color [N,3] at world points [N,3]."""
        if points.ndim != 2 or points.shape[-1] != 3:
            raise ValidationError(f"points must be [N,3], got {tuple(points.shape)}")
        dtype = points.dtype
        if not self.primitives:
            n = points.shape[0]
            return torch.zeros(n, dtype=dtype), torch.zeros(n, 3, dtype=dtype)
        centers = torch.from_numpy(np.stack([p.center for p in self.primitives])).to(dtype)
        radii = torch.from_numpy(np.stack([p.radii for p in self.primitives])).to(dtype)
        colors = torch.from_numpy(np.stack([p.color for p in self.primitives])).to(dtype)
        sigma0 = torch.tensor([p.sigma0 for p in self.primitives], dtype=dtype)
        tau = torch.tensor([p.tau for p in self.primitives], dtype=dtype)
        is_box = torch.tensor([p.kind == "box" for p in self.primitives])

        d = (points[:, None, :] - centers) / radii  # [N,P,3]
        q_ell = torch.linalg.norm(d, dim=-1)
        q_box = d.abs().amax(dim=-1)
        q = torch.where(is_box, q_box, q_ell)
        contrib = sigma0 * torch.sigmoid((1.0 - q) / tau)  # [N,P]
        sigma = contrib.sum(dim=1)
        rgb = (contrib[..., None] * colors).sum(dim=1) / (sigma[..., None] + 1e-9)
        return sigma, rgb

    def primitive_colors(self) -> np.ndarray:
        return np.stack([p.color for p in self.primitives])


def generate_scene(seed: int) -> SyntheticScene:
    """Deterministic head-plus-features scene inside the unit cube, facing +x."""
    rng = np.random.default_rng(seed)
    prims = []

    def soft():
        return float(rng.uniform(25.0, 60.0)), float(rng.uniform(0.04, 0.07))

    head_radii = rng.uniform([0.40, 0.36, 0.46], [0.52, 0.46, 0.58])
    head_center = np.array([0.0, 0.0, rng.uniform(-0.02, 0.10)])
    s0, tau = soft()
    prims.append(
        Primitive("ellipsoid", head_center, head_radii, rng.uniform(0.25, 0.9, 3), s0, tau)
    )

    n_feat = int(rng.integers(1, 4))
    for _ in range(n_feat):
        kind = "box" if rng.random() < 0.35 else "ellipsoid"
        radii = rng.uniform(0.06, 0.16, 3)
        center = np.array(
            [
                head_center[0] + head_radii[0] * rng.uniform(0.55, 0.95),
                rng.uniform(-0.6, 0.6) * head_radii[1],
                head_center[2] + rng.uniform(-0.7, 0.7) * head_radii[2],
            ]
        )
        s0, tau = soft()
        prims.append(Primitive(kind, center, radii, rng.uniform(0.05, 0.95, 3), s0, tau))

    if rng.random() < 0.5:
        s0, tau = soft()
        prims.append(
            Primitive(
                "box",
                np.array([0.0, 0.0, -0.72]),
                np.array([rng.uniform(0.25, 0.4), rng.uniform(0.3, 0.5), 0.18]),
                rng.uniform(0.1, 0.9, 3),
                s0,
                tau,
            )
        )

    for p in prims:
        hi = np.abs(p.center) + p.radii
        over = np.maximum(hi - 0.95, 0.0)
        p.center = p.center - np.sign(p.center) * over
        p.validate()
    return SyntheticScene(seed=seed, primitives=prims)


def scene_from_ref(ref: str) -> SyntheticScene:
    """Parse a `scene:<seed>` reference back into the scene it names."""
    if not ref.startswith("scene:"):
        raise ValidationError(f"unsupported scene reference {ref!r}")
    try:
        seed = int(ref.split(":", 1)[1])
    except ValueError as e:
        raise ValidationError(f"bad scene reference {ref!r}") from e
    return generate_scene(seed)


# ---------------------------------------------------------------------------
# edit styles


@dataclass
class EditStyle:
    name: str
    matrix: np.ndarray  # [3,3]
    offset: np.ndarray  # [3]
    text: str

    def apply(self, rgb: torch.Tensor) -> torch.Tensor:
        """rgb [...,3] -> A rgb + b, same dtype, no clamping."""
        a = torch.from_numpy(self.matrix).to(rgb.dtype)
        b = torch.from_numpy(self.offset).to(rgb.dtype)
        return rgb @ a.T + b

    @property
    def is_linear(self) -> bool:
        return bool(np.all(self.offset == 0.0))

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "matrix": self.matrix.tolist(),
            "offset": self.offset.tolist(),
            "text": self.text,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "EditStyle":
        return EditStyle(
            name=d["name"],
            matrix=np.asarray(d["matrix"], dtype=np.float64),
            offset=np.asarray(d["offset"], dtype=np.float64),
            text=d["text"],
        )


def _hue_matrix(deg: float) -> np.ndarray:
    """Rotation of rgb space about the gray axis; 120 deg permutes channels."""
    th = math.radians(deg)
    a = np.ones(3) / math.sqrt(3.0)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return math.cos(th) * np.eye(3) + math.sin(th) * k + (1.0 - math.cos(th)) * np.outer(a, a)


def _sat_matrix(s: float) -> np.ndarray:
    return s * np.eye(3) + (1.0 - s) * np.outer(np.ones(3), LUMA)


def contain_affine(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale/shift each output channel so A [0,1]^3 + b fits inside [0,1]^3.

    Works row by row: the image of the cube along channel i is the interval
    [b_i + sum_j min(a_ij, 0), b_i + sum_j max(a_ij, 0)]. Rows wider than 1
    are scaled down, then shifted into range. The result is still affine,
    so no runtime clamping is ever needed.
    """
    a = a.copy().astype(np.float64)
    b = b.copy().astype(np.float64)
    for i in range(3):
        lo = b[i] + np.minimum(a[i], 0.0).sum()
        hi = b[i] + np.maximum(a[i], 0.0).sum()
        width = hi - lo
        if width > 1.0:
            s = 1.0 / width
            a[i] *= s
            b[i] *= s
            lo *= s
            hi *= s
        if lo < 0.0:
            b[i] -= lo
        elif hi > 1.0:
            b[i] -= hi - 1.0
    return a, b


def style_affine(
    name: str,
    text: str,
    hue_deg: float = 0.0,
    saturation: float = 1.0,
    value_offset: float = 0.0,
    duotone: tuple | None = None,
) -> EditStyle:
    """Build a contained affine style from photographic-ish knobs.

    duotone=(dark, light) replaces the map with a rank-1 tone ramp along
    luma. Containment correction runs last, so any parameter combination
    yields a style whose output stays in [0,1]^3 for inputs in [0,1]^3.
    """
    if duotone is not None:
        c0 = np.asarray(duotone[0], dtype=np.float64)
        c1 = np.asarray(duotone[1], dtype=np.float64)
        a = np.outer(c1 - c0, LUMA)
        b = c0.copy()
    else:
        a = _sat_matrix(saturation) @ _hue_matrix(hue_deg)
        b = np.full(3, float(value_offset))
    a, b = contain_affine(a, b)
    return EditStyle(name=name, matrix=a, offset=b, text=text)


def _perm(rot: int) -> np.ndarray:
    p = np.eye(3)
    return np.roll(p, rot, axis=0)


def default_style_roster() -> list:
    """Linear training styles: nonnegative matrices with row sums <= 1.

    Linearity (b = 0) keeps black backgrounds black, and the row condition
    keeps any rendered image inside [0,1] without clamping.
    """
    d = np.diag
    styles = [
        ("warm_tint", d([1.0, 0.86, 0.66]) @ _sat_matrix(0.9), "warm sunset tint"),
        ("cool_shift", d([0.66, 0.84, 1.0]) @ _sat_matrix(0.92), "cool blue shift"),
        ("emerald", _perm(1), "emerald channel rotation"),
        ("magenta_pop", d([1.0, 0.72, 1.0]) @ _perm(2), "magenta pop"),
        ("pastel_fade", 0.97 * _sat_matrix(0.45), "soft pastel fade"),
        ("dusk", 0.78 * d([0.92, 0.85, 1.0]), "dim dusk light"),
        ("noir", _sat_matrix(0.0), "black and white noir"),
        ("amber_glow", _sat_matrix(0.7) @ d([1.0, 0.78, 0.45]), "amber glow"),
    ]
    out = [EditStyle(n, m.astype(np.float64), np.zeros(3), t) for n, m, t in styles]
    for s in out:
        rows = s.matrix
        if np.any(rows < -1e-12) or np.any(rows.sum(axis=1) > 1.0 + 1e-12):
            raise AssertionError(f"roster style {s.name} breaks containment")
    return out


def identity_style() -> EditStyle:
    return EditStyle("identity", np.eye(3), np.zeros(3), "no change")


def golden_style() -> EditStyle:
    """Held-out style for adaptation: linear rank-1 golden tone ramp."""
    c1 = np.array([0.99, 0.84, 0.40])
    return EditStyle("golden", np.outer(c1, LUMA), np.zeros(3), "golden duotone glow")


def style_by_name(name: str) -> EditStyle:
    if name == "identity":
        return identity_style()
    if name == "golden":
        return golden_style()
    for s in default_style_roster():
        if s.name == name:
            return s
    raise ValidationError(f"unknown style {name!r}")


def edit_scene(scene: SyntheticScene, style: EditStyle) -> SyntheticScene:
    """Apply the style to every primitive color and the background."""
    prims = [
        Primitive(
            p.kind,
            p.center.copy(),
            p.radii.copy(),
            style.matrix @ p.color + style.offset,
            p.sigma0,
            p.tau,
        )
        for p in scene.primitives
    ]
    bg = style.matrix @ scene.background + style.offset
    return SyntheticScene(seed=scene.seed, primitives=prims, background=bg, style_id=style.name)


def apply_edit(image: torch.Tensor, style: EditStyle) -> torch.Tensor:
    """Pixelwise affine edit of an [H,W,3] image."""
    if image.shape[-1] != 3:
        raise ValidationError("image must have 3 channels last")
    return style.apply(image)


def estimate_affine_edit(pairs: list) -> tuple[np.ndarray, np.ndarray]:
    """Recover (A, b) from (input, edited) image pairs by least squares."""
    if not pairs:
        raise ValidationError("need at least one image pair")
    xs, ys = [], []
    for src, dst in pairs:
        if src.shape != dst.shape or src.shape[-1] != 3:
            raise ValidationError("pair images must share an [H,W,3] shape")
        xs.append(src.reshape(-1, 3).detach().cpu().numpy().astype(np.float64))
        ys.append(dst.reshape(-1, 3).detach().cpu().numpy().astype(np.float64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    design = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    return sol[:3].T.copy(), sol[3].copy()


# ---------------------------------------------------------------------------
# analytic rendering and teacher targets


def analytic_render(
    scene: SyntheticScene,
    pose: CameraPose,
    h: int,
    w: int,
    samples_per_ray: int = 96,
    dtype: torch.dtype = torch.float32,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reference render straight from the scene field, midpoint quadrature.

    Composites the scene background where rays keep transmittance, which is
    what makes affine edits commute with rendering exactly.
    """
    rays = generate_rays(pose, h, w, dtype=dtype)
    o = rays.origins.reshape(-1, 3)
    d = rays.directions.reshape(-1, 3)
    n = o.shape[0]
    edges = torch.linspace(rays.t_near, rays.t_far, samples_per_ray + 1, dtype=dtype)
    deltas = edges[1:] - edges[:-1]
    ts = 0.5 * (edges[:-1] + edges[1:])
    pts = o[:, None, :] + ts[None, :, None] * d[:, None, :]
    sigma, rgb = scene.field(pts.reshape(-1, 3))
    sigma = sigma.reshape(n, samples_per_ray)
    rgb = rgb.reshape(n, samples_per_ray, 3)
    alpha = 1.0 - torch.exp(-sigma * deltas)
    trans = torch.cumprod(
        torch.cat([torch.ones(n, 1, dtype=dtype), 1.0 - alpha[:, :-1]], dim=1), dim=1
    )
    weights = alpha * trans
    acc = weights.sum(dim=1)
    bg = torch.from_numpy(scene.background).to(dtype)
    img = (weights[..., None] * rgb).sum(dim=1) + (1.0 - acc)[:, None] * bg
    depth_raw = (weights * ts).sum(dim=1) / acc.clamp_min(1e-8)
    depth = torch.where(acc > ACC_EPS, depth_raw, torch.zeros_like(depth_raw))
    return img.reshape(h, w, 3), depth.reshape(h, w), acc.reshape(h, w)


@dataclass
class TeacherTargets:
    triplane: Triplane
    poses: list  # ring CameraPose list
    images: torch.Tensor  # [n,H,W,3]
    depths: torch.Tensor  # [n,h,w]


def teacher_targets(
    scene: SyntheticScene,
    style: EditStyle,
    mcfg: ModelConfig,
    *,
    fit_steps: int = 300,
    fit_grid: int = 22,
    fit_seed: int = 0,
    samples_per_ray: int = 96,
) -> TeacherTargets:
    """Fit a triplane to the edited scene and render its reference ring."""
    edited = edit_scene(scene, style)
    tri = fit_triplane_to_scene(
        edited,
        mcfg.triplane_res,
        channels=mcfg.triplane_channels,
        n_extra=mcfg.n_extra_features,
        extent=mcfg.extent,
        grid_n=fit_grid,
        steps=fit_steps,
        seed=fit_seed,
    )
    poses = sample_camera_ring(
        mcfg.ring_n,
        mcfg.ring_radius,
        mcfg.ring_elevation_deg,
        image_res=mcfg.image_res,
        fov_scale=mcfg.fov_scale,
    )
    imgs, deps = [], []
    for p in poses:
        img, _, _ = analytic_render(edited, p, mcfg.image_res, mcfg.image_res, samples_per_ray)
        _, dep, _ = analytic_render(
            edited, p.rescale(mcfg.render_res / mcfg.image_res), mcfg.render_res, mcfg.render_res, samples_per_ray
        )
        imgs.append(img)
        deps.append(dep)
    return TeacherTargets(tri, poses, torch.stack(imgs), torch.stack(deps))


# ---------------------------------------------------------------------------
# dataset


@dataclass
class EditRecord:
    record_id: str
    scene_seed: int
    style_name: str
    prompt_kind: str  # "text" | "image"
    prompt_text: str
    input_pose: CameraPose
    input_image: torch.Tensor  # [H,W,3]
    target_image: torch.Tensor  # [H,W,3] edited scene at the input pose
    t_gt: Triplane
    ring_poses: list
    ring_images: torch.Tensor  # [n,H,W,3]
    ring_depths: torch.Tensor  # [n,h,w]
    heldout_pose: CameraPose
    heldout_image: torch.Tensor
    heldout_depth: torch.Tensor


@dataclass
class EditDataset:
    root: Path
    records: list
    styles: dict  # name -> EditStyle
    exemplars: dict  # style name -> [H,W,3] tensor
    manifest: dict

    def by_style(self, name: str) -> list:
        return [r for r in self.records if r.style_name == name]


EXEMPLAR_SCENE_SEED = 9999
EXEMPLAR_POSE = dict(azimuth_deg=8.0, elevation_deg=12.0)


def _front_pose(rng: np.random.Generator, mcfg: ModelConfig) -> CameraPose:
    """Input poses jitter around the +x facing direction, off the ring."""
    az = float(rng.uniform(-25.0, 25.0))
    el = float(rng.uniform(-5.0, 20.0))
    return pose_from_angles(
        az, el, mcfg.ring_radius, image_res=mcfg.image_res, fov_scale=mcfg.fov_scale
    )


def _heldout_pose(mcfg: ModelConfig) -> CameraPose:
    """Fixed novel view halfway between the first two ring cameras."""
    return pose_from_angles(
        360.0 / mcfg.ring_n / 2.0,
        mcfg.ring_elevation_deg,
        mcfg.ring_radius,
        image_res=mcfg.image_res,
        fov_scale=mcfg.fov_scale,
    )


def build_dataset(
    root,
    scene_seeds: list,
    styles: list,
    mcfg: ModelConfig,
    *,
    seed: int = 0,
    fit_steps: int = 300,
    fit_grid: int = 22,
    samples_per_ray: int = 96,
    include_identity: bool = True,
) -> dict:
    """Write records for every (scene, style) combination under root.

    Always includes an identity-style record per scene when asked, which the
    reconstruction pretraining stage consumes. Returns the manifest dict;
    layout and manifest serialization are deterministic for a given call.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    all_styles = ([identity_style()] if include_identity else []) + list(styles)
    if not scene_seeds:
        raise ValidationError("dataset build needs at least one scene seed")
    if not all_styles:
        raise ValidationError("dataset build needs at least one style")
    names = [s.name for s in all_styles]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate style names in dataset build")

    (root / "exemplars").mkdir(exist_ok=True)
    ex_scene = generate_scene(EXEMPLAR_SCENE_SEED)
    ex_pose = pose_from_angles(
        EXEMPLAR_POSE["azimuth_deg"],
        EXEMPLAR_POSE["elevation_deg"],
        mcfg.ring_radius,
        image_res=mcfg.image_res,
        fov_scale=mcfg.fov_scale,
    )
    for s in all_styles:
        img, _, _ = analytic_render(
            edit_scene(ex_scene, s), ex_pose, mcfg.image_res, mcfg.image_res, samples_per_ray
        )
        save_png(img, root / "exemplars" / f"{s.name}.png")

    held_pose = _heldout_pose(mcfg)
    records = []
    idx = 0
    for scene_seed in scene_seeds:
        scene = generate_scene(scene_seed)
        for s in all_styles:
            rec_id = f"s{scene_seed}_{s.name}"
            rec_dir = root / "pairs" / rec_id
            rec_dir.mkdir(parents=True, exist_ok=True)
            in_pose = _front_pose(rng, mcfg)
            edited = edit_scene(scene, s)
            in_img, _, _ = analytic_render(scene, in_pose, mcfg.image_res, mcfg.image_res, samples_per_ray)
            tgt_img, _, _ = analytic_render(edited, in_pose, mcfg.image_res, mcfg.image_res, samples_per_ray)
            tt = teacher_targets(
                scene,
                s,
                mcfg,
                fit_steps=fit_steps,
                fit_grid=fit_grid,
                fit_seed=seed,
                samples_per_ray=samples_per_ray,
            )
            held_img, held_dep_full, _ = analytic_render(
                edited, held_pose, mcfg.image_res, mcfg.image_res, samples_per_ray
            )
            _, held_dep, _ = analytic_render(
                edited,
                held_pose.rescale(mcfg.render_res / mcfg.image_res),
                mcfg.render_res,
                mcfg.render_res,
                samples_per_ray,
            )

            save_png(in_img, rec_dir / "input.png")
            save_png(tgt_img, rec_dir / "target.png")
            in_pose.save(rec_dir / "input_pose.json")
            save_triplane(tt.triplane, rec_dir / "t_gt.tri")
            for k, (p, img, dep) in enumerate(zip(tt.poses, tt.images, tt.depths)):
                save_png(img, rec_dir / f"view_{k}.png")
                save_depth(dep, rec_dir / f"depth_{k}.depth")
                p.save(rec_dir / f"pose_{k}.json")
            save_png(held_img, rec_dir / "heldout.png")
            save_depth(held_dep, rec_dir / "heldout_depth.depth")
            held_pose.save(rec_dir / "heldout_pose.json")

            records.append(
                {
                    "id": rec_id,
                    "scene_seed": int(scene_seed),
                    "scene_ref": f"scene:{int(scene_seed)}",
                    "style": s.name,
                    "prompt_kind": "text" if idx % 2 == 0 else "image",
                    "prompt_text": s.text,
                    "dir": f"pairs/{rec_id}",
                }
            )
            idx += 1

    manifest = {
        "version": 1,
        "seed": int(seed),
        "image_res": mcfg.image_res,
        "render_res": mcfg.render_res,
        "ring_n": mcfg.ring_n,
        "styles": {s.name: s.to_json_dict() for s in all_styles},
        "exemplar_scene_seed": EXEMPLAR_SCENE_SEED,
        "records": records,
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(root) -> EditDataset:
    root = Path(root)
    try:
        with open(root / "manifest.json") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise ValidationError(f"no dataset manifest under {root}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"bad dataset manifest: {e}") from e
    if manifest.get("version") != 1:
        raise ValidationError(f"unsupported dataset version {manifest.get('version')!r}")

    styles = {n: EditStyle.from_json_dict(d) for n, d in manifest["styles"].items()}
    exemplars = {
        n: load_png(root / "exemplars" / f"{n}.png") for n in styles
    }
    ring_n = manifest["ring_n"]
    records = []
    for rec in manifest["records"]:
        d = root / rec["dir"]
        ring_poses = [CameraPose.load(d / f"pose_{k}.json") for k in range(ring_n)]
        ring_images = torch.stack([load_png(d / f"view_{k}.png") for k in range(ring_n)])
        ring_depths = torch.stack([load_depth(d / f"depth_{k}.depth") for k in range(ring_n)])
        records.append(
            EditRecord(
                record_id=rec["id"],
                scene_seed=rec["scene_seed"],
                style_name=rec["style"],
                prompt_kind=rec["prompt_kind"],
                prompt_text=rec["prompt_text"],
                input_pose=CameraPose.load(d / "input_pose.json"),
                input_image=load_png(d / "input.png"),
                target_image=load_png(d / "target.png"),
                t_gt=load_triplane(d / "t_gt.tri"),
                ring_poses=ring_poses,
                ring_images=ring_images,
                ring_depths=ring_depths,
                heldout_pose=CameraPose.load(d / "heldout_pose.json"),
                heldout_image=load_png(d / "heldout.png"),
                heldout_depth=load_depth(d / "heldout_depth.depth"),
            )
        )
    return EditDataset(root=root, records=records, styles=styles, exemplars=exemplars, manifest=manifest)


def manifest_digest(manifest: dict) -> str:
    """Stable content hash used to detect mismatched dataset/checkpoint pairs."""
    blob = json.dumps(manifest, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
