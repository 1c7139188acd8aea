"""Model and training configuration with JSON round-trip.

Defaults are the desk-scale profile used by the tests: 64px portraits,
32^2 triplanes with 16 channels, a 2x learned upsampler and a 4-camera
ring. The full-scale profile from which these are scaled down (512px,
256^2 planes, batch 32, 60k steps over a 20-style / 20k-pair corpus)
is noted next to each field it affects.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .errors import ValidationError


@dataclass
class ModelConfig:
    image_res: int = 64  # full scale: 512
    patch_size: int = 8
    d_high: int = 64  # token width of the high-detail branch
    d_low: int = 32  # channel width of the conv pyramid output
    n_high_blocks: int = 2
    n_dec_blocks: int = 2
    n_prompt_blocks: int = 1
    mlp_ratio: int = 2
    max_text_len: int = 64
    triplane_channels: int = 16  # full scale: 32
    triplane_res: int = 32  # full scale: 256
    extent: float = 1.0
    decoder_hidden: int = 16
    n_extra_features: int = 4
    render_res: int = 32  # low-res pass; full scale: 128
    upsample_factor: int = 2  # full scale: 4
    upsampler_hidden: int = 16
    samples_per_ray: int = 48  # eval-time quadrature
    ring_n: int = 4
    ring_radius: float = 2.7
    ring_elevation_deg: float = 10.0
    fov_scale: float = 1.6

    @property
    def n_tokens(self) -> int:
        side = self.image_res // self.patch_size
        return side * side

    @property
    def plane_patch(self) -> int:
        side = self.image_res // self.patch_size
        return self.triplane_res // side

    def validate(self) -> "ModelConfig":
        if self.image_res < 8 or self.image_res % self.patch_size:
            raise ValidationError(
                f"image_res {self.image_res} must be a positive multiple of patch_size {self.patch_size}"
            )
        side = self.image_res // self.patch_size
        if self.triplane_res % side:
            raise ValidationError(
                f"triplane_res {self.triplane_res} must be divisible by the token side {side}"
            )
        if self.render_res * self.upsample_factor != self.image_res:
            raise ValidationError(
                f"render_res {self.render_res} x upsample_factor {self.upsample_factor} "
                f"must equal image_res {self.image_res}"
            )
        if self.triplane_channels < 1 + 3 + self.n_extra_features:
            raise ValidationError("triplane_channels too small for density+rgb+extras")
        for name in ("d_high", "d_low", "triplane_channels", "triplane_res", "ring_n", "max_text_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise ValidationError("extent must be positive and finite")
        if self.samples_per_ray < 2:
            raise ValidationError("samples_per_ray must be >= 2")
        if self.ring_radius <= self.extent * math.sqrt(3.0):
            raise ValidationError("ring_radius must put cameras outside the scene bounds")
        return self


@dataclass
class LossWeights:
    lambda1: float = 1.0  # weight on the 2d editing loss
    lambda2: float = 1.0  # weight on the 3d distillation loss
    l2_weight: float = 1.0
    perceptual_weight: float = 2.0
    perceptual_seed: int = 77

    def validate(self) -> "LossWeights":
        for name in ("lambda1", "lambda2", "l2_weight", "perceptual_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0")
        return self


@dataclass
class TrainConfig:
    lr: float = 5e-5  # full-scale default; overfit runs use a larger value
    adapt_lr: float = 1e-3
    batch_size: int = 8  # full scale: 32
    max_steps: int = 2000  # full scale: 60000
    pretrain_steps: int = 500
    adapt_steps: int = 500
    samples_per_ray: int = 16  # training-time quadrature (eval uses model.samples_per_ray)
    views_per_step: int = 2  # ring cameras supervised per step
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> "TrainConfig":
        for name in ("lr", "adapt_lr"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and positive")
        for name in ("batch_size", "max_steps", "adapt_steps", "log_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.pretrain_steps < 0:
            raise ValidationError("pretrain_steps must be >= 0")
        if self.samples_per_ray < 2:
            raise ValidationError("samples_per_ray must be >= 2")
        if not (1 <= self.views_per_step <= self.model.ring_n):
            raise ValidationError("views_per_step must be in [1, ring_n]")
        if not (math.isfinite(self.grad_clip) and self.grad_clip > 0):
            raise ValidationError("grad_clip must be finite and positive")
        self.weights.validate()
        self.model.validate()
        return self


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = dict(data)
    if cls is TrainConfig:
        if "weights" in kwargs:
            kwargs["weights"] = _from_dict(LossWeights, kwargs["weights"])
        if "model" in kwargs:
            kwargs["model"] = _from_dict(ModelConfig, kwargs["model"])
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ValidationError(str(e)) from e


def model_config_from_dict(data: dict) -> ModelConfig:
    return _from_dict(ModelConfig, data).validate()


def train_config_from_dict(data: dict) -> TrainConfig:
    return _from_dict(TrainConfig, data).validate()


def save_config(cfg, path):
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_train_config(path) -> TrainConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"bad config json: {e}") from e
    return train_config_from_dict(data)
