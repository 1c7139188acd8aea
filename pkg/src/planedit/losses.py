"""Training losses: perceptual image loss, 2d edit loss, 3d distillation loss.

The image loss mixes plain MSE with an L1 feature distance through a small
frozen conv net whose weights come from a fixed seed; it is shared by all
runs so loss numbers are comparable. The 3d loss distills a teacher
triplane: L1 on planes, the image loss on ring views, and a masked L1 on
depths where the teacher sees geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import LossWeights
from .errors import ValidationError
from .triplane import Triplane

__all__ = [
    "LossWeights",
    "LossReport",
    "PerceptualNet",
    "image_loss",
    "loss_2d",
    "loss_3d",
    "total_loss",
]


@dataclass
class LossReport:
    """Scalar bookkeeping for one step; floats, not tensors."""

    l_2d: float
    l_3d: float
    l_3d_image: float
    l_3d_triplane: float
    l_3d_depth: float
    total: float

    def to_json_dict(self) -> dict:
        return {
            "l_2d": self.l_2d,
            "l_3d": self.l_3d,
            "l_3d_image": self.l_3d_image,
            "l_3d_triplane": self.l_3d_triplane,
            "l_3d_depth": self.l_3d_depth,
            "total": self.total,
        }


class PerceptualNet(nn.Module):
    """Frozen random 3-layer conv feature extractor for the perceptual term."""

    def __init__(self, seed: int = 77):
        super().__init__()
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(3, 16, 3, stride=2, padding=1),
                nn.Conv2d(16, 32, 3, stride=2, padding=1),
                nn.Conv2d(32, 32, 3, stride=2, padding=1),
            ]
        )
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for c in self.convs:
                c.weight.normal_(0.0, 0.2, generator=gen)
                c.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, img: torch.Tensor) -> list:
        if img.ndim != 3 or img.shape[-1] != 3:
            raise ValidationError(f"image must be [H,W,3], got {tuple(img.shape)}")
        x = img.permute(2, 0, 1).unsqueeze(0)
        out = []
        for c in self.convs:
            x = F.leaky_relu(c(x), 0.2)
            out.append(x)
        return out

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        fa = self.features(a)
        fb = self.features(b)
        return sum((x - y).abs().mean() for x, y in zip(fa, fb))


def image_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    perceptual: PerceptualNet,
    weights: LossWeights,
) -> torch.Tensor:
    """l2_weight * MSE + perceptual_weight * feature L1."""
    if pred.shape != target.shape:
        raise ValidationError(f"image shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    mse = F.mse_loss(pred, target)
    return weights.l2_weight * mse + weights.perceptual_weight * perceptual.distance(pred, target)


def loss_2d(
    pred_image: torch.Tensor,
    target_image: torch.Tensor,
    perceptual: PerceptualNet,
    weights: LossWeights,
) -> torch.Tensor:
    """Edit loss at the input view."""
    return image_loss(pred_image, target_image, perceptual, weights)


def loss_3d(
    pred_triplane: Triplane,
    teacher_triplane: Triplane,
    pred_images: torch.Tensor,
    teacher_images: torch.Tensor,
    pred_depths: torch.Tensor,
    teacher_depths: torch.Tensor,
    perceptual: PerceptualNet,
    weights: LossWeights,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Returns (l_3d, image term, triplane term, depth term).

    Depth is L1 over pixels where the teacher reports geometry (depth > 0);
    an all-empty mask contributes zero rather than NaN.
    """
    if pred_triplane.planes.shape != teacher_triplane.planes.shape:
        raise ValidationError("triplane shapes differ")
    if pred_images.shape != teacher_images.shape:
        raise ValidationError("ring image shapes differ")
    if pred_depths.shape != teacher_depths.shape:
        raise ValidationError("ring depth shapes differ")

    l_tri = (pred_triplane.planes - teacher_triplane.planes).abs().mean()
    l_img = sum(
        image_loss(p, t, perceptual, weights) for p, t in zip(pred_images, teacher_images)
    ) / pred_images.shape[0]
    mask = teacher_depths > 0
    if mask.any():
        l_dep = (pred_depths - teacher_depths)[mask].abs().mean()
    else:
        l_dep = pred_depths.sum() * 0.0
    return l_img + l_tri + l_dep, l_img, l_tri, l_dep


def total_loss(l_2d: torch.Tensor, l_3d: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return weights.lambda1 * l_2d + weights.lambda2 * l_3d
