"""Shared fixtures: a tiny model profile and a small prebuilt dataset.

The tiny profile (16px images, 8^2 triplanes) exists so unit tests can
exercise every code path in seconds; nothing about it changes behavior,
only sizes.
"""

from __future__ import annotations

import numpy as np
import pytest

from planedit.config import ModelConfig, TrainConfig
from planedit.triplane import fit_triplane_to_scene
from planedit.world import Primitive, SyntheticScene, build_dataset, load_dataset, style_by_name


def make_tiny_model_config(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        image_res=16,
        patch_size=8,
        d_high=32,
        d_low=16,
        n_high_blocks=1,
        n_dec_blocks=1,
        n_prompt_blocks=1,
        max_text_len=16,
        triplane_channels=4,
        triplane_res=8,
        decoder_hidden=8,
        n_extra_features=0,
        render_res=8,
        upsample_factor=2,
        upsampler_hidden=8,
        samples_per_ray=8,
        ring_n=3,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def make_tiny_train_config(**overrides) -> TrainConfig:
    cfg = TrainConfig(
        lr=1e-3,
        adapt_lr=1e-3,
        batch_size=2,
        max_steps=4,
        pretrain_steps=2,
        adapt_steps=3,
        samples_per_ray=5,
        views_per_step=2,
        seed=0,
        model=make_tiny_model_config(),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def record_gate_line(config, line: str):
    """Collect a per-check verdict for the end-of-run summary block."""
    lines = getattr(config, "_gate_lines", None)
    if lines is None:
        lines = []
        config._gate_lines = lines
    lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_gate_lines", None)
    if lines:
        terminalreporter.section("acceptance checks")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    build_dataset(
        root,
        [3, 11],
        [style_by_name("warm_tint"), style_by_name("noir")],
        make_tiny_model_config(),
        seed=0,
        fit_steps=40,
        fit_grid=10,
        samples_per_ray=48,
    )
    return load_dataset(root)


@pytest.fixture(scope="session")
def sphere_setup():
    """A single centered ball and a triplane fitted to it."""
    prim = Primitive(
        "ellipsoid",
        np.zeros(3),
        np.full(3, 0.45),
        np.array([0.8, 0.3, 0.2]),
        55.0,
        0.02,
    )
    scene = SyntheticScene(seed=0, primitives=[prim])
    tri = fit_triplane_to_scene(scene, 24, channels=4, n_extra=0, grid_n=18, steps=200, seed=0)
    return scene, tri
