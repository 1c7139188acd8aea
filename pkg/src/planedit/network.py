"""Feedforward editing network: image + prompt -> edited triplane.

Two encoder branches share the input image: a strided conv pyramid for
coarse layout (e_low) and a patch transformer for detail tokens (e_high).
Prompts, either text or an exemplar image, become a token sequence (e_p)
that conditions the detail tokens through one cross-attention layer whose
output projection starts at zero. A token decoder (e_t) turns both branches
into triplane patches. The cross-attention lives inside e_t, so freezing
"e_p and e_t" captures everything the edit path needs.

Zero output projection means edit() and reconstruct() agree bitwise on a
fresh model: the prompt cannot influence the output until training moves
that single matrix away from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .errors import ValidationError
from .renderer import Upsampler
from .triplane import FieldDecoder, Triplane, canonical_field_decoder

TEXT_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789 _-"
_CHAR_TO_ID = {c: i + 1 for i, c in enumerate(TEXT_ALPHABET)}  # 0 reserved for padding
TEXT_VOCAB = len(TEXT_ALPHABET) + 1


def tokenize_text(text: str, max_len: int) -> torch.Tensor:
    """Lowercased character ids; characters outside the alphabet are dropped."""
    ids = [_CHAR_TO_ID[c] for c in text.lower() if c in _CHAR_TO_ID]
    if not ids:
        raise ValidationError(f"prompt text {text!r} has no usable characters")
    return torch.tensor(ids[:max_len], dtype=torch.long)


@dataclass
class Prompt:
    kind: str  # "text" | "image"
    text: str | None = None
    image: torch.Tensor | None = None  # [H,W,3] in [0,1]

    @staticmethod
    def from_text(text: str) -> "Prompt":
        return Prompt(kind="text", text=text)

    @staticmethod
    def from_image(image: torch.Tensor) -> "Prompt":
        return Prompt(kind="image", image=image)

    def validate(self, image_res: int) -> "Prompt":
        if self.kind == "text":
            if not isinstance(self.text, str) or not self.text:
                raise ValidationError("text prompt requires a nonempty string")
        elif self.kind == "image":
            img = self.image
            if img is None or img.ndim != 3 or img.shape != (image_res, image_res, 3):
                got = None if img is None else tuple(img.shape)
                raise ValidationError(
                    f"image prompt must be [{image_res},{image_res},3], got {got}"
                )
        else:
            raise ValidationError(f"unknown prompt kind {self.kind!r}")
        return self


class SelfAttentionBlock(nn.Module):
    """Pre-norm transformer block, single attention head."""

    def __init__(self, dim: int, mlp_ratio: int = 2):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim * mlp_ratio)
        self.fc2 = nn.Linear(dim * mlp_ratio, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        q, k, v = self.wq(h), self.wk(h), self.wv(h)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
        x = x + self.wo(att @ v)
        h = self.ln2(x)
        return x + self.fc2(F.gelu(self.fc1(h)))


class CrossAttention(nn.Module):
    """Single-head cross-attention with a zero-initialized output projection."""

    def __init__(self, dim: int):
        super().__init__()
        self.ln_q = nn.LayerNorm(dim)
        self.ln_kv = nn.LayerNorm(dim)
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)

    def forward(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        qn = self.ln_q(queries)
        kn = self.ln_kv(context)
        q, k, v = self.wq(qn), self.wk(kn), self.wv(kn)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
        return queries + self.wo(att @ v)


class PatchEncoder(nn.Module):
    """Patchify, embed, add a learned position table, run self-attention blocks.

    No trailing layer norm: with all weights at zero the output is exactly
    the position table, which the shape tests rely on.
    """

    def __init__(self, image_res: int, patch_size: int, dim: int, n_blocks: int, mlp_ratio: int):
        super().__init__()
        self.patch_size = patch_size
        self.side = image_res // patch_size
        self.embed = nn.Linear(3 * patch_size * patch_size, dim)
        self.pos = nn.Parameter(torch.zeros(self.side * self.side, dim))
        self.blocks = nn.ModuleList(SelfAttentionBlock(dim, mlp_ratio) for _ in range(n_blocks))

    def patchify(self, img: torch.Tensor) -> torch.Tensor:
        p, s = self.patch_size, self.side
        x = img.reshape(s, p, s, p, 3).permute(0, 2, 1, 3, 4)
        return x.reshape(s * s, 3 * p * p)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = self.embed(self.patchify(img)) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return x


class PromptEncoder(nn.Module):
    """Maps a text or exemplar-image prompt to a token sequence."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.max_text_len = cfg.max_text_len
        self.char_embed = nn.Embedding(TEXT_VOCAB, cfg.d_high)
        self.text_pos = nn.Parameter(torch.zeros(cfg.max_text_len, cfg.d_high))
        self.image_encoder = PatchEncoder(
            cfg.image_res, cfg.patch_size, cfg.d_high, 0, cfg.mlp_ratio
        )
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(cfg.d_high, cfg.mlp_ratio) for _ in range(cfg.n_prompt_blocks)
        )

    def forward(self, prompt: Prompt) -> torch.Tensor:
        if prompt.kind == "text":
            ids = tokenize_text(prompt.text, self.max_text_len)
            x = self.char_embed(ids) + self.text_pos[: ids.shape[0]]
        else:
            x = self.image_encoder(prompt.image)
        for blk in self.blocks:
            x = blk(x)
        return x


class TriplaneDecoder(nn.Module):
    """Fuses coarse and detail tokens into triplane patches.

    Sequence layout is [projected coarse tokens | detail tokens]; after the
    blocks only the detail positions are read out, one plane patch triple
    per token, row-major over the token grid.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        side = cfg.image_res // cfg.patch_size
        self.side = side
        self.patch = cfg.triplane_res // side
        self.channels = cfg.triplane_channels
        self.resolution = cfg.triplane_res
        self.extent = cfg.extent
        self.proj_low = nn.Linear(cfg.d_low, cfg.d_high)
        self.low_pos = nn.Parameter(torch.zeros(side * side, cfg.d_high))
        self.high_pos = nn.Parameter(torch.zeros(side * side, cfg.d_high))
        self.cross = CrossAttention(cfg.d_high)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(cfg.d_high, cfg.mlp_ratio) for _ in range(cfg.n_dec_blocks)
        )
        self.norm = nn.LayerNorm(cfg.d_high)
        self.head = nn.Linear(cfg.d_high, 3 * self.channels * self.patch * self.patch)

    def forward(self, f_low: torch.Tensor, f_attn: torch.Tensor) -> Triplane:
        low_tokens = self.proj_low(f_low.flatten(1).transpose(0, 1)) + self.low_pos
        x = torch.cat([low_tokens, f_attn + self.high_pos], dim=0)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x[-self.side * self.side :])
        patches = self.head(x)
        s, p, c = self.side, self.patch, self.channels
        planes = (
            patches.reshape(s, s, 3, c, p, p)
            .permute(2, 3, 0, 4, 1, 5)
            .reshape(3, c, self.resolution, self.resolution)
        )
        return Triplane(planes=planes, extent=self.extent)


class EditorModel(nn.Module):
    """End-to-end editor with named parameter groups.

    Groups: e_low (conv pyramid), e_high (detail tokens), e_p (prompt),
    e_t (fusion decoder, cross-attention included), decoder_mlp (triplane
    feature decoder) and upsampler. Distillation trains e_p and e_t only;
    adaptation trains e_p plus the layer norms inside e_t.
    """

    GROUPS = ("e_low", "e_high", "e_p", "e_t", "decoder_mlp", "upsampler")

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.e_low = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 24, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(24, cfg.d_low, 3, stride=2, padding=1),
        )
        self.e_high = PatchEncoder(
            cfg.image_res, cfg.patch_size, cfg.d_high, cfg.n_high_blocks, cfg.mlp_ratio
        )
        self.e_p = PromptEncoder(cfg)
        self.e_t = TriplaneDecoder(cfg)
        self.decoder_mlp = FieldDecoder(
            cfg.triplane_channels, cfg.decoder_hidden, cfg.n_extra_features
        )
        self.upsampler = Upsampler(
            cfg.n_extra_features, cfg.upsampler_hidden, cfg.upsample_factor
        )
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.ndim >= 2:
                    p.normal_(0.0, 0.02, generator=gen)
                else:
                    p.zero_()
            for m in self.modules():
                if isinstance(m, nn.LayerNorm):
                    m.weight.fill_(1.0)
                    m.bias.zero_()
            # identities at init: prompt path and upsampler residual are silent
            self.e_t.cross.wo.weight.zero_()
            self.e_t.cross.wo.bias.zero_()
            self.upsampler.conv2.weight.zero_()
            self.upsampler.conv2.bias.zero_()
            ref = canonical_field_decoder(
                self.cfg.triplane_channels, self.cfg.decoder_hidden, self.cfg.n_extra_features
            )
            self.decoder_mlp.load_state_dict(ref.state_dict())

    # --- encoder ops ---

    def _check_image(self, img: torch.Tensor):
        r = self.cfg.image_res
        if img.ndim != 3 or img.shape != (r, r, 3):
            raise ValidationError(f"image must be [{r},{r},3], got {tuple(img.shape)}")

    def encode_low(self, img: torch.Tensor) -> torch.Tensor:
        self._check_image(img)
        x = img.permute(2, 0, 1).unsqueeze(0)
        return self.e_low(x).squeeze(0)

    def encode_high(self, img: torch.Tensor) -> torch.Tensor:
        self._check_image(img)
        return self.e_high(img)

    def encode_prompt(self, prompt: Prompt) -> torch.Tensor:
        prompt.validate(self.cfg.image_res)
        return self.e_p(prompt)

    def cross_attend(self, f_high: torch.Tensor, f_p: torch.Tensor) -> torch.Tensor:
        return self.e_t.cross(f_high, f_p)

    def decode_triplane(self, f_low: torch.Tensor, f_attn: torch.Tensor) -> Triplane:
        return self.e_t(f_low, f_attn)

    # --- full paths ---

    def reconstruct(self, img: torch.Tensor) -> Triplane:
        """No-prompt path: detail tokens go to the decoder untouched."""
        return self.decode_triplane(self.encode_low(img), self.encode_high(img))

    def edit(self, img: torch.Tensor, prompt: Prompt) -> Triplane:
        f_low = self.encode_low(img)
        f_attn = self.cross_attend(self.encode_high(img), self.encode_prompt(prompt))
        return self.decode_triplane(f_low, f_attn)

    def ablate_branch(self, img: torch.Tensor, prompt: Prompt, branch: str) -> Triplane:
        """Diagnostic: zero one decoder input stream ("low" or "high")."""
        f_low = self.encode_low(img)
        f_attn = self.cross_attend(self.encode_high(img), self.encode_prompt(prompt))
        if branch == "low":
            f_low = torch.zeros_like(f_low)
        elif branch == "high":
            f_attn = torch.zeros_like(f_attn)
        else:
            raise ValidationError(f"unknown branch {branch!r}, expected 'low' or 'high'")
        return self.decode_triplane(f_low, f_attn)

    # --- parameter bookkeeping ---

    def param_groups(self) -> dict:
        groups = {g: [] for g in self.GROUPS}
        for name, _ in self.named_parameters():
            groups[name.split(".", 1)[0]].append(name)
        return groups

    def norm_param_names(self) -> list:
        """Layer-norm parameter names inside the fusion decoder."""
        names = []
        for mod_name, m in self.e_t.named_modules():
            if isinstance(m, nn.LayerNorm):
                prefix = f"e_t.{mod_name}." if mod_name else "e_t."
                names.extend([f"{prefix}weight", f"{prefix}bias"])
        return sorted(names)

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())
