import pytest
import torch

from planedit.errors import ValidationError
from planedit.network import (
    TEXT_VOCAB,
    CrossAttention,
    EditorModel,
    Prompt,
    tokenize_text,
)

from conftest import make_tiny_model_config


@pytest.fixture()
def tiny_model():
    return EditorModel(make_tiny_model_config(), seed=0)


def rand_img(res=16, seed=0):
    return torch.rand(res, res, 3, generator=torch.Generator().manual_seed(seed))


def test_tokenizer_ids_are_one_based_over_the_alphabet():
    assert tokenize_text("abc", 16).tolist() == [1, 2, 3]
    assert tokenize_text("Z", 16).tolist() == [26]
    assert tokenize_text("0", 16).tolist() == [27]
    assert tokenize_text("9", 16).tolist() == [36]
    assert tokenize_text(" _-", 16).tolist() == [37, 38, 39]
    assert TEXT_VOCAB == 40
    assert tokenize_text("a!b", 16).tolist() == [1, 2]
    assert tokenize_text("abcdef", 3).tolist() == [1, 2, 3]
    with pytest.raises(ValidationError):
        tokenize_text("!!!", 16)


def test_prompt_validation():
    Prompt.from_text("warm tint").validate(16)
    Prompt.from_image(torch.zeros(16, 16, 3)).validate(16)
    with pytest.raises(ValidationError):
        Prompt.from_text("").validate(16)
    with pytest.raises(ValidationError):
        Prompt.from_image(torch.zeros(8, 8, 3)).validate(16)
    with pytest.raises(ValidationError):
        Prompt(kind="audio").validate(16)


def test_zero_image_gives_zero_coarse_features(tiny_model):
    f = tiny_model.encode_low(torch.zeros(16, 16, 3))
    assert torch.equal(f, torch.zeros_like(f))


def test_brightness_shift_moves_conv_features_by_the_kernel_sum(tiny_model):
    conv = tiny_model.e_low[0]
    img = rand_img(seed=1) * 0.5
    x = img.permute(2, 0, 1).unsqueeze(0)
    delta = conv(x + 0.1) - conv(x)
    want = conv.weight.sum(dim=(1, 2, 3))
    # interior outputs only: stride-2 windows at the border overlap padding
    for i, j in ((2, 3), (4, 4), (6, 1)):
        assert torch.allclose(delta[0, :, i, j], 0.1 * want, atol=1e-5)


def test_constant_image_token_deltas_equal_the_position_table(tiny_model):
    pe = tiny_model.e_p.image_encoder  # zero blocks: tokens = embed + pos
    img = torch.full((16, 16, 3), 0.3)
    x = pe(img)
    assert torch.allclose(x - x[0], pe.pos - pe.pos[0], atol=1e-6)


def test_patchify_extracts_row_major_blocks(tiny_model):
    pe = tiny_model.e_high
    img = torch.arange(16 * 16 * 3, dtype=torch.float32).reshape(16, 16, 3)
    patches = pe.patchify(img)
    assert patches.shape == (4, 3 * 8 * 8)
    for k, (i, j) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        block = img[i * 8 : (i + 1) * 8, j * 8 : (j + 1) * 8, :]
        assert torch.equal(patches[k], block.reshape(-1))


def test_attention_blocks_are_permutation_equivariant(tiny_model):
    pe = tiny_model.e_high
    tok = pe.embed(pe.patchify(rand_img(seed=2))) + pe.pos
    perm = torch.tensor([2, 0, 3, 1])
    x, xp = tok, tok[perm]
    for blk in pe.blocks:
        x = blk(x)
        xp = blk(xp)
    assert torch.allclose(xp, x[perm], atol=1e-6)


def test_prompt_embeddings_deterministic_and_distinct(tiny_model):
    p = Prompt.from_text("warm tint")
    a = tiny_model.encode_prompt(p)
    b = tiny_model.encode_prompt(p)
    assert torch.equal(a, b)

    ea = tiny_model.encode_prompt(Prompt.from_text("a")).detach().flatten()
    eb = tiny_model.encode_prompt(Prompt.from_text("b")).detach().flatten()
    cos = torch.dot(ea, eb) / (ea.norm() * eb.norm())
    assert float(cos) < 0.9999

    zi = tiny_model.encode_prompt(Prompt.from_image(torch.zeros(16, 16, 3))).detach()
    oi = tiny_model.encode_prompt(Prompt.from_image(torch.ones(16, 16, 3))).detach()
    assert float((zi - oi).norm()) > 0.0


def test_single_context_token_attention_is_explicit():
    torch.manual_seed(0)
    ca = CrossAttention(4)
    queries = torch.randn(3, 4)
    ctx = torch.randn(1, 4)
    v = ca.wv(ca.ln_kv(ctx))
    want = queries + ca.wo(v.expand(3, -1))
    assert torch.allclose(ca(queries, ctx), want, atol=1e-6)


def test_dominant_logit_saturates_the_attention():
    torch.manual_seed(1)
    ca = CrossAttention(4)
    with torch.no_grad():
        ca.wq.weight.zero_()
        ca.wq.bias.copy_(torch.tensor([1.0, -1.0, 1.0, -1.0]))
        ca.wk.weight.copy_(torch.eye(4) * 5.0)
        ca.wk.bias.zero_()
    # tokens normalize to +/- the query direction: logits ~ (+10, -10)
    ctx = torch.tensor([[1.0, -1.0, 1.0, -1.0], [-1.0, 1.0, -1.0, 1.0]])
    queries = torch.randn(3, 4)
    assert torch.allclose(ca(queries, ctx), ca(queries, ctx[:1]), atol=1e-4)


def test_fresh_model_edit_matches_reconstruct_bitwise(tiny_model):
    img = rand_img(seed=3)
    base = tiny_model.reconstruct(img)
    for prompt in (Prompt.from_text("emerald"), Prompt.from_image(rand_img(seed=4))):
        assert torch.equal(tiny_model.edit(img, prompt).planes, base.planes)


def test_init_is_seed_reproducible():
    cfg = make_tiny_model_config()
    a = EditorModel(cfg, seed=1).state_dict()
    b = EditorModel(cfg, seed=1).state_dict()
    c = EditorModel(cfg, seed=2).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_parameter_groups_partition_the_model(tiny_model):
    groups = tiny_model.param_groups()
    assert sorted(groups.keys()) == sorted(EditorModel.GROUPS)
    named = dict(tiny_model.named_parameters())
    listed = [n for names in groups.values() for n in names]
    assert sorted(listed) == sorted(named.keys())
    total = sum(named[n].numel() for n in listed)
    assert total == tiny_model.count_parameters()

    norms = tiny_model.norm_param_names()
    assert norms
    for n in norms:
        assert n.startswith("e_t.") and n in named
        assert named[n].ndim == 1
    assert "e_t.cross.wo.weight" in groups["e_t"]


def test_decode_triplane_shape_and_determinism(tiny_model):
    img = rand_img(seed=5)
    f_low = tiny_model.encode_low(img)
    f_high = tiny_model.encode_high(img)
    assert f_low.shape == (16, 2, 2)
    assert f_high.shape == (4, 32)
    t1 = tiny_model.decode_triplane(f_low, f_high)
    t2 = tiny_model.decode_triplane(f_low, f_high)
    assert t1.planes.shape == (3, 4, 8, 8)
    assert torch.equal(t1.planes, t2.planes)


def test_head_bias_tiles_one_patch_across_each_plane(tiny_model):
    dec = tiny_model.e_t
    with torch.no_grad():
        dec.head.weight.zero_()
        dec.head.bias.copy_(torch.arange(dec.head.bias.numel(), dtype=torch.float32))
    img = rand_img(seed=6)
    planes = tiny_model.reconstruct(img).planes
    patch = dec.head.bias.reshape(3, dec.channels, dec.patch, dec.patch)
    assert torch.equal(planes, patch.repeat(1, 1, dec.side, dec.side))


def test_branch_ablation_zeroes_the_named_stream(tiny_model):
    img = rand_img(seed=7)
    prompt = Prompt.from_text("noir")
    f_low = tiny_model.encode_low(img)
    f_high = tiny_model.encode_high(img)

    no_high = tiny_model.ablate_branch(img, prompt, "high")
    want = tiny_model.decode_triplane(f_low, torch.zeros_like(f_high))
    assert torch.equal(no_high.planes, want.planes)

    no_low = tiny_model.ablate_branch(img, prompt, "low")
    want = tiny_model.decode_triplane(torch.zeros_like(f_low), f_high)
    assert torch.equal(no_low.planes, want.planes)

    with pytest.raises(ValidationError):
        tiny_model.ablate_branch(img, prompt, "both")


def test_wrong_resolution_is_rejected(tiny_model):
    with pytest.raises(ValidationError):
        tiny_model.encode_low(torch.zeros(8, 8, 3))
    with pytest.raises(ValidationError):
        tiny_model.edit(rand_img(), Prompt.from_image(torch.zeros(8, 8, 3)))
