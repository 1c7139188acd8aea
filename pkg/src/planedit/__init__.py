"""Triplane portrait editing: feedforward 3D edits with a volume renderer."""

from .cameras import CameraPose, RayBundle, generate_rays, pose_from_angles, sample_camera_ring
from .config import LossWeights, ModelConfig, TrainConfig
from .errors import CheckpointError, TrainingDivergedError, ValidationError
from .network import EditorModel, Prompt
from .renderer import RenderOutput, Upsampler, render_full, volume_render
from .triplane import FieldDecoder, Triplane, load_triplane, sample_triplane, save_triplane

__all__ = [
    "CameraPose",
    "RayBundle",
    "generate_rays",
    "pose_from_angles",
    "sample_camera_ring",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "CheckpointError",
    "TrainingDivergedError",
    "ValidationError",
    "EditorModel",
    "Prompt",
    "RenderOutput",
    "Upsampler",
    "render_full",
    "volume_render",
    "FieldDecoder",
    "Triplane",
    "load_triplane",
    "sample_triplane",
    "save_triplane",
]

__version__ = "0.1.0"
