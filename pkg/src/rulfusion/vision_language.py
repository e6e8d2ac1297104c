"""Visual encoding of spectral images, cross-modal projection, and the small
language model that consumes a visual prefix plus text embeddings.

Three interchangeable visual encoders produce a fixed-width embedding: a
GELU-activated convolutional stack with average pooling, a patch
transformer, and the same patch transformer initialised by masked-patch
reconstruction pretraining.  All encoders here are small and randomly
initialised; reaching published-benchmark accuracy is out of scope.

The language model is width-matched to the text embeddings and consumes the
sequence [visual prefix; text tokens].  Pad positions are never processed:
attention, pooling, and downstream key/value projections all operate on the
real prefix, and pad rows of the padded token view are defined as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import blocks
from .errors import ConfigError, ContractError, ShapeError
from .numkit import (
    SeededRng,
    Tape,
    Tensor,
    add,
    adam_step,
    AdamState,
    concat_rows,
    gelu,
    matmul,
    mean_all,
    mean_rows,
    mul,
    repeat_rows,
    reshape,
    scatter_rows_add,
    slice_rows,
    sub,
    take_flat,
    take_rows,
    tensor,
)

VARIANTS = ("cnn", "vit", "vit_mae")


@dataclass(frozen=True)
class VisionConfig:
    variant: str = "vit_mae"
    image_size: int = 114
    image_patch: int = 6
    d_vis: int = 128
    depth: int = 2
    n_heads: int = 4
    cnn_channels: tuple[int, int, int] = (16, 32, 64)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown vision variant {self.variant!r}")
        if self.image_size % self.image_patch != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch {self.image_patch}"
            )
        if self.d_vis % self.n_heads != 0:
            raise ConfigError(
                f"d_vis {self.d_vis} not divisible by heads {self.n_heads}"
            )

    @property
    def n_tokens(self) -> int:
        side = self.image_size // self.image_patch
        return side * side

    @property
    def patch_dim(self) -> int:
        return 3 * self.image_patch * self.image_patch


@lru_cache(maxsize=16)
def _patchify_idx(size: int, patch: int) -> np.ndarray:
    """Flat gather indices mapping (3, size, size) -> (tokens, 3*patch*patch)."""
    side = size // patch
    tokens = []
    for ti in range(side):
        for tj in range(side):
            idx = []
            for c in range(3):
                for r in range(patch):
                    for q in range(patch):
                        idx.append(c * size * size + (ti * patch + r) * size + (tj * patch + q))
            tokens.append(idx)
    return np.array(tokens, dtype=np.int64)


@lru_cache(maxsize=32)
def _im2col_first_idx(size: int) -> np.ndarray:
    """3x3 valid conv gather for a (3, size, size) image, channel-major columns."""
    out = size - 2
    ii, jj = np.meshgrid(np.arange(out), np.arange(out), indexing="ij")
    base = (ii * size + jj).reshape(-1, 1)
    offsets = []
    for c in range(3):
        for di in range(3):
            for dj in range(3):
                offsets.append(c * size * size + di * size + dj)
    return base + np.array(offsets, dtype=np.int64).reshape(1, -1)


@lru_cache(maxsize=64)
def _im2col_mat_idx(h: int, w: int, c_in: int) -> np.ndarray:
    """3x3 valid conv gather for a (h*w, c_in) feature matrix."""
    out_h, out_w = h - 2, w - 2
    ii, jj = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    cols = []
    for c in range(c_in):
        for di in range(3):
            for dj in range(3):
                cols.append((((ii + di) * w + (jj + dj)) * c_in + c).reshape(-1))
    return np.stack(cols, axis=1)


@lru_cache(maxsize=64)
def _pool_row_idx(h: int, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """2x2 average-pool source rows for a (h*w, C) feature matrix (floor)."""
    out_h, out_w = h // 2, w // 2
    ii, jj = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    r0 = (2 * ii) * w + 2 * jj
    return (
        r0.reshape(-1),
        (r0 + 1).reshape(-1),
        (r0 + w).reshape(-1),
        (r0 + w + 1).reshape(-1),
    )


def init_vision_params(
    cfg: VisionConfig, rng: SeededRng, prefix: str = "vision"
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    if cfg.variant in ("vit", "vit_mae"):
        blocks.init_linear(params, f"{prefix}.patch", cfg.patch_dim, cfg.d_vis, rng)
        params[f"{prefix}.pos"] = Tensor(
            rng.normal_array((cfg.n_tokens, cfg.d_vis), std=0.02),
            requires_grad=True,
            name=f"{prefix}.pos",
        )
        blocks.init_encoder(params, prefix, cfg.depth, cfg.d_vis, rng)
    else:
        c1, c2, c3 = cfg.cnn_channels
        size = cfg.image_size
        for i, (c_in, c_out) in enumerate(((3, c1), (c1, c2), (c2, c3))):
            if size < 3:
                raise ConfigError(
                    f"image size {cfg.image_size} too small for the conv stack"
                )
            blocks.init_linear(params, f"{prefix}.conv{i}", c_in * 9, c_out, rng)
            size = (size - 2) // 2
        blocks.init_linear(params, f"{prefix}.out", c3, cfg.d_vis, rng)
    return params


def _cnn_forward(img: np.ndarray, params: dict[str, Tensor], cfg: VisionConfig, prefix: str) -> Tensor:
    size = cfg.image_size
    x = tensor(img)
    # First conv consumes the raw (3, S, S) layout.
    cols = take_flat(x, _im2col_first_idx(size), ((size - 2) ** 2, 27))
    x = gelu(blocks.linear(cols, params, f"{prefix}.conv0"))
    h = w = size - 2
    for layer in (1, 2):
        r0, r1, r2, r3 = _pool_row_idx(h, w)
        pooled = (
            take_rows(x, r0) + take_rows(x, r1) + take_rows(x, r2) + take_rows(x, r3)
        ) * 0.25
        h, w = h // 2, w // 2
        c_in = x.shape[1]
        idx = _im2col_mat_idx(h, w, c_in)
        cols = take_flat(pooled, idx, (idx.shape[0], idx.shape[1]))
        x = gelu(blocks.linear(cols, params, f"{prefix}.conv{layer}"))
        h, w = h - 2, w - 2
    r0, r1, r2, r3 = _pool_row_idx(h, w)
    pooled = (
        take_rows(x, r0) + take_rows(x, r1) + take_rows(x, r2) + take_rows(x, r3)
    ) * 0.25
    gap = mean_rows(pooled)
    out = blocks.linear(reshape(gap, (1, gap.shape[0])), params, f"{prefix}.out")
    return reshape(out, (cfg.d_vis,))


def _vit_tokens(
    img: np.ndarray,
    params: dict[str, Tensor],
    cfg: VisionConfig,
    prefix: str,
    include_pos: bool = True,
) -> Tensor:
    patches = tensor(img.reshape(-1)[_patchify_idx(cfg.image_size, cfg.image_patch)])
    emb = blocks.linear(patches, params, f"{prefix}.patch")
    if include_pos:
        emb = add(emb, params[f"{prefix}.pos"])
    return blocks.encoder_forward(emb, params, prefix, cfg.depth, cfg.n_heads)


def encode_image(
    img: np.ndarray,
    params: dict[str, Tensor],
    cfg: VisionConfig,
    prefix: str = "vision",
    include_pos: bool = True,
) -> Tensor:
    """(3, S, S) image -> d_vis embedding (mean-pooled tokens / pooled conv map)."""
    img = np.asarray(img, dtype=np.float64)
    expected = (3, cfg.image_size, cfg.image_size)
    if img.shape != expected:
        raise ShapeError(f"encode_image: image shape {img.shape} != {expected}")
    if cfg.variant == "cnn":
        return _cnn_forward(img, params, cfg, prefix)
    return mean_rows(_vit_tokens(img, params, cfg, prefix, include_pos=include_pos))


# ---------------------------------------------------------------------------
# Cross-modal projector
# ---------------------------------------------------------------------------


def init_projector(
    d_vis: int, d_llm: int, rng: SeededRng, prefix: str = "projector"
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    blocks.init_linear(params, prefix, d_vis, d_llm, rng)
    return params


def project(h_vis: Tensor, params: dict[str, Tensor], prefix: str = "projector") -> Tensor:
    w = params[f"{prefix}.w"]
    if h_vis.shape != (w.shape[0],):
        raise ShapeError(f"project: embedding shape {h_vis.shape} != ({w.shape[0]},)")
    out = blocks.linear(reshape(h_vis, (1, w.shape[0])), params, prefix)
    return reshape(out, (w.shape[1],))


# ---------------------------------------------------------------------------
# Mini language model over [visual prefix; text]
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiniLMConfig:
    width: int = 96
    depth: int = 2
    n_heads: int = 2
    causal: bool = False
    max_seq: int = 513  # visual prefix + max token length

    def __post_init__(self):
        if self.width % self.n_heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.n_heads}")


def init_lm_params(cfg: MiniLMConfig, rng: SeededRng, prefix: str = "lm") -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    blocks.init_encoder(params, prefix, cfg.depth, cfg.width, rng)
    return params


@dataclass
class FuseResult:
    tokens: Tensor  # (n_real, width): prefix + non-pad text positions
    pooled: Tensor  # (width,): mean over the real positions
    n_real: int
    total_len: int  # 1 + L_text

    def padded_tokens(self) -> np.ndarray:
        """(1 + L_text, width) view; pad positions are zero by definition."""
        out = np.zeros((self.total_len, self.tokens.shape[1]))
        out[: self.n_real] = self.tokens.data
        return out


def fuse_llm(
    e_vis: Tensor,
    f_text: Tensor,
    mask: np.ndarray,
    params: dict[str, Tensor],
    cfg: MiniLMConfig,
    prefix: str = "lm",
    attn_sink: Optional[list[np.ndarray]] = None,
) -> FuseResult:
    """Run the LM over the visual prefix plus non-pad text embeddings.

    The pooled output is the masked mean over real positions, so appending
    pad tokens can never change it.
    """
    if e_vis.shape != (cfg.width,) or f_text.shape[1] != cfg.width:
        raise ShapeError(
            f"fuse_llm: widths differ: prefix {e_vis.shape}, text {f_text.shape}, "
            f"lm width {cfg.width}"
        )
    if len(mask) != f_text.shape[0]:
        raise ShapeError(f"mask length {len(mask)} != text rows {f_text.shape[0]}")
    n_text = int(mask.sum())
    if not mask[:n_text].all():
        raise ContractError("pad mask must be a contiguous prefix of real positions")
    total = 1 + f_text.shape[0]
    if total > cfg.max_seq:
        raise ContractError(f"sequence {total} exceeds LM capacity {cfg.max_seq}")
    seq = concat_rows([reshape(e_vis, (1, cfg.width)), slice_rows(f_text, 0, n_text)])
    bias = blocks.causal_bias(1 + n_text) if cfg.causal else None
    out = blocks.encoder_forward(
        seq, params, prefix, cfg.depth, cfg.n_heads, mask_bias=bias, attn_sink=attn_sink
    )
    return FuseResult(tokens=out, pooled=mean_rows(out), n_real=1 + n_text, total_len=total)


# ---------------------------------------------------------------------------
# Masked-patch reconstruction pretraining
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MAEConfig:
    mask_ratio: float = 0.75
    decoder_width: int = 64
    decoder_depth: int = 1
    decoder_heads: int = 2

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in (0, 1), got {self.mask_ratio}")


def init_mae_params(
    vis_cfg: VisionConfig, mae_cfg: MAEConfig, rng: SeededRng, prefix: str = "maedec"
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    blocks.init_linear(params, f"{prefix}.embed", vis_cfg.d_vis, mae_cfg.decoder_width, rng)
    params[f"{prefix}.mask_token"] = Tensor(
        rng.normal_array((mae_cfg.decoder_width,), std=0.02),
        requires_grad=True,
        name=f"{prefix}.mask_token",
    )
    params[f"{prefix}.pos"] = Tensor(
        rng.normal_array((vis_cfg.n_tokens, mae_cfg.decoder_width), std=0.02),
        requires_grad=True,
        name=f"{prefix}.pos",
    )
    blocks.init_encoder(params, prefix, mae_cfg.decoder_depth, mae_cfg.decoder_width, rng)
    blocks.init_linear(params, f"{prefix}.head", mae_cfg.decoder_width, vis_cfg.patch_dim, rng)
    return params


def mae_image_loss(
    img: np.ndarray,
    params: dict[str, Tensor],
    vis_cfg: VisionConfig,
    mae_cfg: MAEConfig,
    masked_idx: np.ndarray,
    vision_prefix: str = "vision",
    mae_prefix: str = "maedec",
) -> Tensor:
    """MSE over the masked patches of one image, given the mask."""
    if vis_cfg.variant != "vit_mae":
        raise ContractError("masked-patch pretraining requires the vit_mae variant")
    tokens = vis_cfg.n_tokens
    masked_idx = np.asarray(masked_idx, dtype=np.int64)
    visible_idx = np.setdiff1d(np.arange(tokens), masked_idx)
    if len(visible_idx) == 0 or len(masked_idx) == 0:
        raise ContractError("mask must leave at least one visible and one masked patch")

    patches = img.reshape(-1)[_patchify_idx(vis_cfg.image_size, vis_cfg.image_patch)]
    vis_patches = tensor(patches[visible_idx])
    emb = add(
        blocks.linear(vis_patches, params, f"{vision_prefix}.patch"),
        take_rows(params[f"{vision_prefix}.pos"], visible_idx),
    )
    encoded = blocks.encoder_forward(
        emb, params, vision_prefix, vis_cfg.depth, vis_cfg.n_heads
    )

    dec_vis = blocks.linear(encoded, params, f"{mae_prefix}.embed")
    mask_token = params[f"{mae_prefix}.mask_token"]
    base = repeat_rows(mask_token, tokens)
    delta = sub(dec_vis, repeat_rows(mask_token, len(visible_idx)))
    full = add(scatter_rows_add(base, delta, visible_idx), params[f"{mae_prefix}.pos"])
    decoded = blocks.encoder_forward(
        full, params, mae_prefix, mae_cfg.decoder_depth, mae_cfg.decoder_heads
    )
    recon = blocks.linear(decoded, params, f"{mae_prefix}.head")
    diff = sub(take_rows(recon, masked_idx), tensor(patches[masked_idx]))
    return mean_all(mul(diff, diff))


def sample_mask(rng: SeededRng, n_tokens: int, mask_ratio: float) -> np.ndarray:
    n_mask = min(n_tokens - 1, max(1, int(round(mask_ratio * n_tokens))))
    return np.array(sorted(rng.permutation(n_tokens)[:n_mask]), dtype=np.int64)


def mae_batch_loss(
    images: np.ndarray,
    params: dict[str, Tensor],
    vis_cfg: VisionConfig,
    mae_cfg: MAEConfig,
    rng: SeededRng,
) -> Tensor:
    """Mean masked-reconstruction loss over a batch, masks drawn from rng."""
    total = None
    for img in images:
        masked = sample_mask(rng, vis_cfg.n_tokens, mae_cfg.mask_ratio)
        loss = mae_image_loss(np.asarray(img, dtype=np.float64), params, vis_cfg, mae_cfg, masked)
        total = loss if total is None else add(total, loss)
    return total * (1.0 / len(images))


def mae_pretrain(
    images: np.ndarray,
    params: dict[str, Tensor],
    vis_cfg: VisionConfig,
    mae_cfg: MAEConfig,
    steps: int,
    batch_size: int,
    rng: SeededRng,
    lr: float = 0.002,
) -> list[float]:
    """Seeded pretraining loop over a cached image set; returns the loss curve.

    Updates the vision encoder and decoder parameter groups only.
    """
    trainable = {
        name: p
        for name, p in params.items()
        if name.startswith("vision.") or name.startswith("maedec.")
    }
    state = AdamState(lr=lr)
    curve: list[float] = []
    n = len(images)
    for _ in range(steps):
        batch = [images[rng.randint(n)] for _ in range(batch_size)]
        for p in trainable.values():
            p.zero_grad()
        with Tape() as tape:
            loss = mae_batch_loss(np.asarray(batch), params, vis_cfg, mae_cfg, rng)
        tape.backward(loss)
        adam_step(trainable, {k: p.grad for k, p in trainable.items()}, state)
        curve.append(loss.item())
    return curve
