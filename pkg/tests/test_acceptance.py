"""End-to-end quality gate at the desk-scale profile.

Every test here finishes through the `check` fixture, which prints one
PASS/FAIL line with the measured numbers and collects it into the
"acceptance checks" section of the run summary. The expensive artifacts
(dataset build, pretraining, distillation, ablation twins, adaptation)
are session fixtures shared across tests.

Quality thresholds sit 1 dB below the pilot means recorded in
docs/calibration.md; runtime bounds assume a single CPU core.
"""

import json
import math
import time
from types import SimpleNamespace

import pytest
import torch
from fastapi.testclient import TestClient

from conftest import make_tiny_model_config, make_tiny_train_config, record_gate_line
from planedit.cameras import pose_from_angles
from planedit.config import LossWeights, TrainConfig
from planedit.losses import PerceptualNet, image_loss, loss_2d, loss_3d, total_loss
from planedit.metrics import EmbeddingModel, consistency_3d, cosine, id_t, time_inference
from planedit.network import EditorModel, Prompt
from planedit.renderer import Upsampler, render_rays, volume_render
from planedit.service import create_app
from planedit.training import (
    AdaptPair,
    adapt,
    distill,
    load_checkpoint,
    make_state,
    pairs_from_records,
    pretrain_reconstruction,
    record_prompt,
    save_checkpoint,
    student_render,
)
from planedit.triplane import Triplane, canonical_field_decoder, sample_triplane, softplus_inverse
from planedit.world import (
    analytic_render,
    apply_edit,
    build_dataset,
    edit_scene,
    generate_scene,
    golden_style,
    load_dataset,
    style_by_name,
)

PRETRAIN_STEPS = 500
DISTILL_STEPS = 2000
ADAPT_STEPS = 500
DATASET_FIT_STEPS = 300
SCENE_SEEDS = [0, 1, 2, 3]
STYLE_NAMES = ["warm_tint", "noir"]

TRAIN_PSNR_MIN = 19.0  # pilot mean above 20 dB; 1 dB allowance
HELDOUT_PSNR_MIN = 14.0  # pilot mean above 15 dB; 1 dB allowance


@pytest.fixture
def check(request):
    def _check(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}: {name}" + (f" [{detail}]" if detail else "")
        record_gate_line(request.config, line)
        print(line)
        assert ok, line

    return _check


def accept_config() -> TrainConfig:
    """Overfit profile: default 64px model, small batch, large lr."""
    return TrainConfig(
        lr=1e-3,
        batch_size=3,
        max_steps=DISTILL_STEPS,
        pretrain_steps=PRETRAIN_STEPS,
        samples_per_ray=12,
        views_per_step=2,
        seed=0,
    ).validate()


@pytest.fixture(scope="session")
def accept_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("accept")


@pytest.fixture(scope="session")
def accept_dataset(accept_dir):
    root = accept_dir / "data"
    build_dataset(
        root,
        SCENE_SEEDS,
        [style_by_name(n) for n in STYLE_NAMES],
        accept_config().model,
        seed=0,
        fit_steps=DATASET_FIT_STEPS,
    )
    return load_dataset(root)


@pytest.fixture(scope="session")
def pretrained_ckpt(accept_dir, accept_dataset):
    state = make_state(accept_config(), policy="pretrain")
    t0 = time.perf_counter()
    pretrain_reconstruction(state, accept_dataset, PRETRAIN_STEPS, accept_dir / "pretrain.jsonl")
    wall = time.perf_counter() - t0
    path = accept_dir / "pretrained.ckpt"
    save_checkpoint(path, state)
    (accept_dir / "pretrain_wall.json").write_text(json.dumps({"wall_s": wall}))
    return path


@pytest.fixture(scope="session")
def overfit(accept_dir, accept_dataset, pretrained_ckpt):
    state = load_checkpoint(pretrained_ckpt)
    t0 = time.perf_counter()
    distill(state, accept_dataset, DISTILL_STEPS, accept_dir / "distill.jsonl")
    wall = time.perf_counter() - t0
    ckpt = accept_dir / "overfit.ckpt"
    save_checkpoint(ckpt, state)
    pre = json.loads((accept_dir / "pretrain_wall.json").read_text())["wall_s"]
    return SimpleNamespace(
        state=state,
        ckpt=ckpt,
        logs=[accept_dir / "pretrain.jsonl", accept_dir / "distill.jsonl"],
        distill_wall_s=wall,
        total_wall_s=pre + wall,
    )


@pytest.fixture(scope="session")
def ablation(accept_dir, accept_dataset, pretrained_ckpt, overfit):
    """Loss-weight twins. The overfit run is the full twin; the ablated runs
    repeat its exact schedule (same pretrained start, same seed and step
    count) with one loss branch switched off."""
    runs = {"full": overfit.state}
    for name, (l1, l2) in {"no3d": (1.0, 0.0), "no2d": (0.0, 1.0)}.items():
        state = load_checkpoint(pretrained_ckpt)
        state.cfg.weights.lambda1 = l1
        state.cfg.weights.lambda2 = l2
        distill(state, accept_dataset, DISTILL_STEPS, accept_dir / f"ablate_{name}.jsonl")
        runs[name] = state
    return runs


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    mse = float(((a.double() - b.double()) ** 2).mean())
    return float("inf") if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


@torch.no_grad()
def eval_record(state, dataset, rec) -> SimpleNamespace:
    """Shared per-record scores: psnr at both views, depth L1, input-view loss."""
    tri = state.model.edit(rec.input_image, record_prompt(rec, dataset))
    spr = state.cfg.model.samples_per_ray
    r_in = student_render(state.model, tri, rec.input_pose, samples_per_ray=spr)
    r_held = student_render(state.model, tri, rec.heldout_pose, samples_per_ray=spr)
    mask = rec.heldout_depth > 0
    if mask.any():
        dep = float((r_held.depth - rec.heldout_depth)[mask].abs().mean())
    else:
        dep = 0.0
    return SimpleNamespace(
        train_psnr=psnr(r_in.rgb_final, rec.target_image),
        held_psnr=psnr(r_held.rgb_final, rec.heldout_image),
        held_depth_l1=dep,
        input_loss=float(
            image_loss(r_in.rgb_final, rec.target_image, state.perceptual, state.cfg.weights)
        ),
    )


def mean(xs) -> float:
    xs = list(xs)
    return sum(xs) / len(xs)


# ---------------------------------------------------------------------------
# fast checks


def test_renderer_matches_analytic_transmittance(check):
    t0 = time.perf_counter()
    c = [0.3, 0.6, 0.9]
    planes = torch.zeros(3, 4, 16, 16)
    planes[:, 0] = float(softplus_inverse(torch.tensor(2.0, dtype=torch.float64))) / 3.0
    for i, ci in enumerate(c):
        planes[:, 1 + i] = math.log(ci / (1.0 - ci)) / 3.0
    tri = Triplane(planes=planes)
    dec = canonical_field_decoder(4, n_extra=0)
    with torch.no_grad():
        rgb, _, _, acc = render_rays(
            tri,
            dec,
            torch.tensor([[-0.5, 0.0, 0.0]]),
            torch.tensor([[1.0, 0.0, 0.0]]),
            0.0,
            1.0,
            128,
            "eval",
        )
    want_acc = 1.0 - math.exp(-2.0)
    rels = [abs(float(rgb[0, i]) - ci * want_acc) / (ci * want_acc) for i, ci in enumerate(c)]
    rels.append(abs(float(acc[0]) - want_acc) / want_acc)
    wall = time.perf_counter() - t0
    check(
        "renderer transmittance oracle",
        max(rels) < 0.01 and wall < 5.0,
        f"max rel err {max(rels):.2e}, {wall:.2f}s",
    )


def fd_worst_rel(f, coords, eps: float = 1e-6) -> float:
    """Max relative gap between autograd and central differences at coords."""
    loss = f()
    grads = torch.autograd.grad(loss, [t for t, _ in coords])
    worst = 0.0
    for (tensor, idx), g in zip(coords, grads):
        a = float(g.reshape(-1)[idx])
        with torch.no_grad():
            tensor.view(-1)[idx] += eps
            hi = float(f())
            tensor.view(-1)[idx] -= 2.0 * eps
            lo = float(f())
            tensor.view(-1)[idx] += eps
        fd = (hi - lo) / (2.0 * eps)
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


def top_coords(f, tensors, k: int):
    loss = f()
    grads = torch.autograd.grad(loss, tensors)
    out = []
    for t, g in zip(tensors, grads):
        for idx in g.abs().reshape(-1).topk(min(k, g.numel())).indices.tolist():
            out.append((t, idx))
    return out


def test_gradients_match_finite_differences(check):
    t0 = time.perf_counter()
    gen = torch.Generator().manual_seed(5)

    def r64(*shape, scale=1.0):
        return torch.randn(*shape, generator=gen, dtype=torch.float64) * scale

    # feature sampling alone
    planes_a = r64(3, 4, 8, 8, scale=0.5).requires_grad_()
    pts = torch.rand(64, 3, generator=gen, dtype=torch.float64) * 2.2 - 1.1
    w_a = r64(64, 4)

    def fa():
        return (sample_triplane(Triplane(planes=planes_a), pts) * w_a).sum()

    worst_a = fd_worst_rel(fa, top_coords(fa, [planes_a], 8))

    # rendering composed with the image loss
    planes_b = r64(3, 4, 8, 8, scale=0.3).requires_grad_()
    dec = canonical_field_decoder(4, n_extra=0).double()
    percep = PerceptualNet(77).double()
    wcfg = LossWeights()
    pose_b = pose_from_angles(15.0, 10.0, 2.7, image_res=16)
    target_b = torch.rand(16, 16, 3, generator=gen, dtype=torch.float64)

    def fb():
        out = volume_render(Triplane(planes=planes_b), dec, pose_b, 16, 16, 8, "eval")
        return image_loss(out.rgb_low, target_b, percep, wcfg)

    worst_b = fd_worst_rel(fb, top_coords(fb, [planes_b], 6))

    # the whole editing network through the training objective
    model = EditorModel(make_tiny_model_config(), seed=0).double()
    with torch.no_grad():  # fresh models block prompt gradients by design
        model.e_t.cross.wo.weight.add_(r64(*model.e_t.cross.wo.weight.shape, scale=0.05))
    img = torch.rand(16, 16, 3, generator=gen, dtype=torch.float64)
    prompt = Prompt.from_text("dusk glow")
    in_pose = pose_from_angles(8.0, 6.0, 2.7, image_res=16)
    ring_pose = pose_from_angles(120.0, 10.0, 2.7, image_res=16)
    t_gt = Triplane(planes=r64(3, 4, 8, 8, scale=0.2))
    tgt_in = torch.rand(16, 16, 3, generator=gen, dtype=torch.float64)
    tgt_ring = torch.rand(1, 16, 16, 3, generator=gen, dtype=torch.float64)
    tgt_dep = torch.rand(1, 8, 8, generator=gen, dtype=torch.float64) * 3.0
    tgt_dep[:, ::2] = 0.0

    def fc():
        tri = model.edit(img, prompt)
        r_in = student_render(model, tri, in_pose, samples_per_ray=6)
        l2d = loss_2d(r_in.rgb_final, tgt_in, percep, wcfg)
        r_ring = student_render(model, tri, ring_pose, samples_per_ray=6)
        l3d, _, _, _ = loss_3d(
            tri, t_gt, r_ring.rgb_final[None], tgt_ring, r_ring.depth[None], tgt_dep, percep, wcfg
        )
        return total_loss(l2d, l3d, wcfg)

    named = dict(model.named_parameters())
    grads = torch.autograd.grad(fc(), list(named.values()), allow_unused=True)
    by_name = dict(zip(named, grads))
    coords = []
    checked = set()
    for prefix in ("e_low.", "e_high.", "e_p.", "e_t.", "decoder_mlp.", "upsampler."):
        best = None
        for n, g in by_name.items():
            if n.startswith(prefix) and g is not None:
                m = float(g.abs().max())
                if m > 1e-5 and (best is None or m > best[0]):
                    best = (m, n, int(g.abs().reshape(-1).argmax()))
        if best is not None:
            coords.append((named[best[1]], best[2]))
            checked.add(prefix)
    worst_c = fd_worst_rel(fc, coords)

    wall = time.perf_counter() - t0
    worst = max(worst_a, worst_b, worst_c)
    ok = worst < 1e-3 and wall < 120.0 and "e_p." in checked and len(checked) == 6
    check(
        "finite-difference gradients",
        ok,
        f"sampling {worst_a:.1e}, render {worst_b:.1e}, editor {worst_c:.1e}, {wall:.1f}s",
    )


def test_fresh_model_edits_are_identity(check):
    model = EditorModel(accept_config().model, seed=0)
    gen = torch.Generator().manual_seed(1)
    words = ["noir", "warm tint", "emerald", "dusk", "pastel fade"]
    same = 0
    with torch.no_grad():
        for i in range(10):
            img = torch.rand(model.cfg.image_res, model.cfg.image_res, 3, generator=gen)
            if i % 2 == 0:
                prompt = Prompt.from_text(words[i // 2])
            else:
                prompt = Prompt.from_image(
                    torch.rand(model.cfg.image_res, model.cfg.image_res, 3, generator=gen)
                )
            if torch.equal(model.edit(img, prompt).planes, model.reconstruct(img).planes):
                same += 1
    check("edits start as the identity", same == 10, f"{same}/10 bitwise equal")


def test_metric_laws_hold(check):
    m = EmbeddingModel("identity")
    img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(2))
    self_score = id_t(img, img, m)

    gen = torch.Generator().manual_seed(3)
    u = (torch.randn(8, generator=gen) + 0.01).double()
    v = (torch.randn(8, generator=gen) + 0.01).double()
    scale_gap = max(abs(cosine(k * u, v) - cosine(u, v)) for k in (1e-4, 0.5, 3.0, 1e4))

    tri = Triplane(planes=torch.randn(3, 4, 8, 8, generator=gen) * 0.3)
    dec = canonical_field_decoder(4, n_extra=0)
    up = Upsampler(n_features=0, hidden=8, factor=2)
    poses = [pose_from_angles(az, 10.0, 2.7, image_res=16) for az in (0.0, 120.0, 240.0)]
    a = consistency_3d(tri, dec, up, poses, m, image_res=16, samples_per_ray=8)
    b = consistency_3d(tri, dec, up, poses[::-1], m, image_res=16, samples_per_ray=8)

    state = make_state(make_tiny_train_config())
    sample = (img, Prompt.from_text("noir"), pose_from_angles(5.0, 10.0, 2.7, image_res=16))
    t_mean, t_p50, t_p95 = time_inference(state.model, sample, n=100)

    ok = (
        abs(self_score - 1.0) <= 1e-12
        and scale_gap <= 1e-12
        and abs(a - b) <= 1e-12
        and 0 < t_p50 <= t_p95
        and t_mean > 0
    )
    check(
        "metric laws",
        ok,
        f"id_t(x,x)-1 {self_score - 1.0:.1e}, scale gap {scale_gap:.1e}, "
        f"perm gap {abs(a - b):.1e}, p50 {t_p50:.1f}ms p95 {t_p95:.1f}ms over n=100",
    )


def test_service_contracts_hold(check, tiny_dataset, tmp_path):
    import base64

    from planedit.renderer import png_bytes

    state = make_state(make_tiny_train_config())
    app = create_app(state, n_preview=2, adapt_steps=60)
    client = TestClient(app)

    img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(4))
    body = {
        "image": base64.b64encode(png_bytes(img)).decode(),
        "prompt": {"type": "text", "text": "noir"},
        "yaw": 10.0,
        "pitch": 5.0,
        "seed": 0,
    }
    e1 = client.post("/edit", json=body).json()
    e2 = client.post("/edit", json=body).json()
    edit_ok = e1["edited"] == e2["edited"] and e1["depth"] == e2["depth"]

    hash_before = client.get("/healthz").json()["params_hash"]
    p1 = client.get("/render", params={"session": e1["session_id"], "yaw": 25.0, "pitch": 0.0})
    p2 = client.get("/render", params={"session": e1["session_id"], "yaw": 25.0, "pitch": 0.0})
    render_ok = (
        p1.content == p2.content and client.get("/healthz").json()["params_hash"] == hash_before
    )

    files = []
    for i in range(2):
        files.append(("inputs", (f"i{i}.png", png_bytes(img), "image/png")))
        files.append(("targets", (f"t{i}.png", png_bytes(img * 0.5), "image/png")))
    first = client.post("/adapt", files=files)
    second = client.post("/adapt", files=files)
    busy_ok = first.status_code == 200 and second.status_code == 409
    app.state.serving.adapt_thread.join(timeout=120.0)
    done = client.get(f"/adapt/{first.json()['job_id']}").json()["status"] == "done"

    # interrupted training resumes on the same trajectory
    cfg = make_tiny_train_config(max_steps=5, pretrain_steps=0)
    sa = make_state(cfg)
    distill(sa, tiny_dataset, 2)
    ck = tmp_path / "mid.ckpt"
    save_checkpoint(ck, sa)
    distill(sa, tiny_dataset, 3, tmp_path / "a.jsonl")
    sb = load_checkpoint(ck)
    distill(sb, tiny_dataset, 3, tmp_path / "b.jsonl")
    la = [json.loads(l)["total"] for l in (tmp_path / "a.jsonl").read_text().splitlines()]
    lb = [json.loads(l)["total"] for l in (tmp_path / "b.jsonl").read_text().splitlines()]
    resume_gap = max(abs(x - y) for x, y in zip(la, lb))
    resume_ok = resume_gap <= 1e-12 and len(la) == len(lb) == 3

    ok = edit_ok and render_ok and busy_ok and done and resume_ok
    check(
        "service contracts",
        ok,
        f"edit twin {edit_ok}, render pure {render_ok}, busy 409 {busy_ok}, "
        f"resume gap {resume_gap:.1e}",
    )


# ---------------------------------------------------------------------------
# dataset-backed checks


def test_training_phases_freeze_the_right_parameters(check, accept_dataset):
    cfg = accept_config()
    cfg.max_steps = 20
    state = make_state(cfg)
    names = [n for n, _ in state.model.named_parameters()]

    before = {n: p.detach().clone() for n, p in state.model.named_parameters()}
    distill(state, accept_dataset, 20)
    outside = [n for n in names if not (n.startswith("e_p.") or n.startswith("e_t."))]
    distill_ok = all(
        torch.equal(before[n], dict(state.model.named_parameters())[n]) for n in outside
    )

    before = {n: p.detach().clone() for n, p in state.model.named_parameters()}
    pairs = pairs_from_records(accept_dataset.records[:3], accept_dataset)
    adapt(state, pairs, 20)
    allowed = set(state.model.norm_param_names())
    outside = [n for n in names if not (n.startswith("e_p.") or n in allowed)]
    adapt_ok = all(
        torch.equal(before[n], dict(state.model.named_parameters())[n]) for n in outside
    )

    check(
        "phase freezing",
        distill_ok and adapt_ok,
        f"distill untouched {distill_ok}, adapt untouched {adapt_ok}",
    )


def test_teacher_edits_commute_with_rendering(check, accept_dataset):
    mcfg = accept_config().model
    cache = {}
    worst = 0.0
    for rec in accept_dataset.records:
        scene = generate_scene(rec.scene_seed)
        style = accept_dataset.styles[rec.style_name]
        edited = edit_scene(scene, style)
        for k, pose in enumerate(rec.ring_poses):
            key = (rec.scene_seed, k)
            if key not in cache:
                cache[key] = analytic_render(scene, pose, mcfg.image_res, mcfg.image_res, 96)[0]
            a = analytic_render(edited, pose, mcfg.image_res, mcfg.image_res, 96)[0]
            b = apply_edit(cache[key], style)
            worst = max(worst, float((a - b).abs().max()))
    check(
        "edits commute with rendering",
        worst <= 1e-5,
        f"max pixel gap {worst:.2e} over {len(accept_dataset.records)} records",
    )


# ---------------------------------------------------------------------------
# trained-model checks


def test_logged_losses_satisfy_the_weighted_sum(check, overfit):
    worst = 0.0
    n = 0
    for log in overfit.logs:
        for line in log.read_text().splitlines():
            rec = json.loads(line)
            worst = max(worst, abs(rec["total"] - (1.0 * rec["l_2d"] + 1.0 * rec["l_3d"])))
            n += 1
    ok = worst <= 1e-12 and n == PRETRAIN_STEPS + DISTILL_STEPS
    check("loss bookkeeping", ok, f"max identity gap {worst:.1e} over {n} reports")


def test_overfit_run_reaches_target_psnr(check, overfit, accept_dataset):
    scores = [eval_record(overfit.state, accept_dataset, r) for r in accept_dataset.records]
    train = mean(s.train_psnr for s in scores)
    held = mean(s.held_psnr for s in scores)
    ok = train >= TRAIN_PSNR_MIN and held >= HELDOUT_PSNR_MIN and overfit.total_wall_s < 1800.0
    check(
        "overfit quality",
        ok,
        f"train {train:.2f}dB (need {TRAIN_PSNR_MIN}), heldout {held:.2f}dB "
        f"(need {HELDOUT_PSNR_MIN}), {overfit.total_wall_s / 60.0:.1f}min",
    )


def test_ablations_degrade_the_expected_channels(check, ablation, accept_dataset):
    scores = {
        name: [eval_record(st, accept_dataset, r) for r in accept_dataset.records]
        for name, st in ablation.items()
    }
    depth = {n: mean(s.held_depth_l1 for s in sc) for n, sc in scores.items()}
    img = {n: mean(s.input_loss for s in sc) for n, sc in scores.items()}
    depth_ratio = depth["no3d"] / depth["full"]
    img_ratio = img["no2d"] / img["full"]
    ok = depth_ratio >= 1.2 and img_ratio >= 1.2
    check(
        "ablation directions",
        ok,
        f"depth L1 x{depth_ratio:.2f} without 3d loss, "
        f"input-view loss x{img_ratio:.2f} without 2d loss "
        f"(need x1.20, twins at {DISTILL_STEPS} steps)",
    )


def test_few_pair_adaptation_halves_heldout_loss(check, overfit):
    state = load_checkpoint(overfit.ckpt)
    mcfg = state.cfg.model
    style = golden_style()
    prompt = Prompt.from_text("golden hour glow")

    def pair(seed: int, az: float, el: float) -> AdaptPair:
        pose = pose_from_angles(
            az, el, mcfg.ring_radius, image_res=mcfg.image_res, fov_scale=mcfg.fov_scale
        )
        img, _, _ = analytic_render(generate_scene(seed), pose, mcfg.image_res, mcfg.image_res, 96)
        return AdaptPair(img, apply_edit(img, style), prompt, pose)

    # the style is the novel element; the pairs reuse the distillation scenes
    # at fresh azimuths so the probe measures style transfer, not how well
    # the editor reconstructs scenes it has never seen
    pairs = [pair(SCENE_SEEDS[i % len(SCENE_SEEDS)], -20.0 + 4.5 * i, 8.0) for i in range(10)]
    heldout = [pair(SCENE_SEEDS[2], 5.0, 12.0)]
    result = adapt(state, pairs, ADAPT_STEPS, heldout=heldout)
    ratio = result["heldout_loss_final"] / result["heldout_loss_step0"]
    ok = ratio <= 0.5
    check(
        "few-pair adaptation",
        ok,
        f"heldout loss {result['heldout_loss_step0']:.4f} -> {result['heldout_loss_final']:.4f} "
        f"(x{ratio:.2f}, need <=0.50) in {result['wall_time_s'] / 60.0:.1f}min",
    )
