"""Umbrella command line: data building, training, editing, serving.

Exit codes: 0 success, 2 validation/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import CheckpointError, ValidationError


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="distillation steps")
    p.add_argument("--pretrain-steps", type=int, default=None)
    p.add_argument("--samples-per-ray", type=int, default=None, help="training quadrature")
    p.add_argument("--views-per-step", type=int, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)


def _build_cfg(args):
    from .config import TrainConfig, load_train_config

    cfg = load_train_config(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {
        "lr": args.lr,
        "batch_size": args.batch_size,
        "max_steps": args.steps,
        "pretrain_steps": args.pretrain_steps,
        "samples_per_ray": args.samples_per_ray,
        "views_per_step": args.views_per_step,
        "grad_clip": args.grad_clip,
        "seed": args.seed,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.lambda1 is not None:
        cfg.weights.lambda1 = args.lambda1
    if args.lambda2 is not None:
        cfg.weights.lambda2 = args.lambda2
    return cfg.validate()


def _ckpt_path(args) -> str:
    path = getattr(args, "ckpt", None) or os.environ.get("PLANEDIT_CKPT")
    if not path:
        raise ValidationError("no checkpoint given (use --ckpt or PLANEDIT_CKPT)")
    return path


def cmd_make_data(args) -> int:
    from .config import ModelConfig, load_train_config
    from .world import build_dataset, default_style_roster, style_by_name

    if args.config:
        mcfg = load_train_config(args.config).model.validate()
    else:
        mcfg = ModelConfig().validate()
    roster = default_style_roster()
    if args.styles:
        roster = [style_by_name(n) for n in args.styles.split(",")]
    seeds = [int(s) for s in args.scene_seeds.split(",")] if args.scene_seeds else list(
        range(args.scenes)
    )
    manifest = build_dataset(
        args.out, seeds, roster, mcfg, seed=args.seed, fit_steps=args.fit_steps
    )
    print(f"wrote {len(manifest['records'])} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import distill, make_state, pretrain_reconstruction, save_checkpoint
    from .world import load_dataset

    cfg = _build_cfg(args)
    ds = load_dataset(args.data)
    state = make_state(cfg, policy="pretrain")
    if cfg.pretrain_steps > 0:
        rep = pretrain_reconstruction(state, ds, cfg.pretrain_steps, args.log)
        print(f"pretrain done at step {state.step}: total {rep.total:.4f}")
    rep = distill(state, ds, cfg.max_steps, args.log)
    print(f"distill done at step {state.step}: total {rep.total:.4f}")
    save_checkpoint(args.out, state)
    print(f"checkpoint saved to {args.out}")
    return 0


def _load_pairs(pairs_dir: str, prompt_text: str, mcfg):
    from .cameras import pose_from_angles
    from .network import Prompt
    from .renderer import load_png
    from .training import AdaptPair

    d = Path(pairs_dir)
    inputs = sorted(d.glob("input_*.png"))
    if not inputs:
        raise ValidationError(f"no input_*.png files under {pairs_dir}")
    front = pose_from_angles(
        0.0, mcfg.ring_elevation_deg, mcfg.ring_radius,
        image_res=mcfg.image_res, fov_scale=mcfg.fov_scale,
    )
    prompt = Prompt.from_text(prompt_text)
    pairs = []
    for f in inputs:
        t = d / f.name.replace("input_", "target_")
        if not t.exists():
            raise ValidationError(f"missing target for {f.name}")
        pairs.append(
            AdaptPair(
                input_image=load_png(f),
                target_image=load_png(t),
                prompt=prompt,
                input_pose=front,
            )
        )
    return pairs


def cmd_adapt(args) -> int:
    from .training import adapt, load_checkpoint, save_checkpoint

    state = load_checkpoint(_ckpt_path(args))
    pairs = _load_pairs(args.pairs, args.prompt_text, state.cfg.model)
    heldout = None
    if args.heldout_pairs:
        heldout = _load_pairs(args.heldout_pairs, args.prompt_text, state.cfg.model)
    result = adapt(state, pairs, args.steps, heldout=heldout, log_path=args.log)
    print(json.dumps({k: v for k, v in result.items() if k != "heldout_curve"}))
    save_checkpoint(args.out, state)
    print(f"adapted checkpoint saved to {args.out}")
    return 0


def cmd_edit(args) -> int:
    import torch

    from .network import Prompt
    from .renderer import load_png, save_png
    from .training import load_checkpoint, student_render
    from .triplane import save_triplane

    state = load_checkpoint(_ckpt_path(args))
    mcfg = state.cfg.model
    img = load_png(args.image)
    if img.shape != (mcfg.image_res, mcfg.image_res, 3):
        raise ValidationError(
            f"input must be {mcfg.image_res}x{mcfg.image_res} RGB, got {tuple(img.shape)}"
        )
    if (args.prompt_text is None) == (args.prompt_image is None):
        raise ValidationError("pass exactly one of --prompt-text / --prompt-image")
    prompt = (
        Prompt.from_text(args.prompt_text)
        if args.prompt_text is not None
        else Prompt.from_image(load_png(args.prompt_image))
    )
    with torch.no_grad():
        tri = state.model.edit(img, prompt)
        from .cameras import pose_from_angles

        pose = pose_from_angles(
            args.yaw, args.pitch, mcfg.ring_radius,
            image_res=mcfg.image_res, fov_scale=mcfg.fov_scale,
        )
        out = student_render(state.model, tri, pose, samples_per_ray=mcfg.samples_per_ray)
    save_png(out.rgb_final, args.out)
    if args.triplane:
        save_triplane(tri, args.triplane)
    print(f"edited view written to {args.out}")
    return 0


def cmd_render(args) -> int:
    import torch

    from .cameras import pose_from_angles
    from .renderer import Upsampler, render_full, save_depth, save_png
    from .triplane import canonical_field_decoder, load_triplane

    tri = load_triplane(args.triplane)
    if args.ckpt or os.environ.get("PLANEDIT_CKPT"):
        from .training import load_checkpoint

        state = load_checkpoint(_ckpt_path(args))
        decoder, upsampler = state.model.decoder_mlp, state.model.upsampler
        mcfg = state.cfg.model
        image_res, fov_scale, radius = mcfg.image_res, mcfg.fov_scale, mcfg.ring_radius
        samples = mcfg.samples_per_ray
    else:
        n_extra = min(4, max(0, tri.channels - 4))
        decoder = canonical_field_decoder(tri.channels, n_extra=n_extra)
        upsampler = Upsampler(n_extra)
        image_res, fov_scale, radius, samples = 64, 1.6, 2.7, 48
    pose = pose_from_angles(
        args.yaw, args.pitch, radius, image_res=image_res, fov_scale=fov_scale
    )
    with torch.no_grad():
        out = render_full(tri, decoder, upsampler, pose, image_res, image_res, samples)
    save_png(out.rgb_final, args.out)
    if args.depth:
        save_depth(out.depth, args.depth)
    print(f"render written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .training import load_checkpoint
    from .world import load_dataset

    state = load_checkpoint(_ckpt_path(args))
    ds = load_dataset(args.data)
    report = evaluate(state, ds, n_time=args.n_time)
    report.save(args.out)
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    from .training import load_checkpoint

    state = load_checkpoint(_ckpt_path(args))
    serve(state, host=args.host, port=args.port, n_preview=args.preview_views)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planedit", description="triplane portrait editor")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("make-data", help="build a synthetic edit dataset")
    d.add_argument("--out", required=True)
    d.add_argument("--config", default=None, help="json TrainConfig; its model block sizes the data")
    d.add_argument("--scenes", type=int, default=4)
    d.add_argument("--scene-seeds", default=None, help="comma-separated seeds, overrides --scenes")
    d.add_argument("--styles", default=None, help="comma-separated style names")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--fit-steps", type=int, default=300)
    d.set_defaults(fn=cmd_make_data)

    t = sub.add_parser("train", help="pretrain + distill on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None, help="json TrainConfig")
    t.add_argument("--log", default=None, help="jsonl loss log path")
    _add_config_flags(t)
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("adapt", help="fast adaptation from image pairs")
    a.add_argument("--ckpt", default=None)
    a.add_argument("--pairs", required=True, help="dir with input_*.png / target_*.png")
    a.add_argument("--heldout-pairs", default=None)
    a.add_argument("--prompt-text", default="adapted style")
    a.add_argument("--steps", type=int, default=500)
    a.add_argument("--out", required=True)
    a.add_argument("--log", default=None)
    a.set_defaults(fn=cmd_adapt)

    e = sub.add_parser("edit", help="edit one image and render a view")
    e.add_argument("--ckpt", default=None)
    e.add_argument("--image", required=True)
    e.add_argument("--prompt-text", default=None)
    e.add_argument("--prompt-image", default=None)
    e.add_argument("--yaw", type=float, default=0.0)
    e.add_argument("--pitch", type=float, default=10.0)
    e.add_argument("--out", required=True)
    e.add_argument("--triplane", default=None, help="also save the edited triplane")
    e.set_defaults(fn=cmd_edit)

    r = sub.add_parser("render", help="render a saved triplane")
    r.add_argument("--triplane", required=True)
    r.add_argument("--ckpt", default=None, help="optional; canonical decoder otherwise")
    r.add_argument("--yaw", type=float, default=0.0)
    r.add_argument("--pitch", type=float, default=10.0)
    r.add_argument("--out", required=True)
    r.add_argument("--depth", default=None)
    r.set_defaults(fn=cmd_render)

    v = sub.add_parser("eval", help="metric report for a checkpoint")
    v.add_argument("--ckpt", default=None)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--n-time", type=int, default=100)
    v.set_defaults(fn=cmd_eval)

    s = sub.add_parser("serve", help="run the http editing service")
    s.add_argument("--ckpt", default=None)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8008)
    s.add_argument("--preview-views", type=int, default=3)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
