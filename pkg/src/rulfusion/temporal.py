"""Temporal branch: overlapping patch embedding plus transformer encoding.

A length-L window is replication-padded by one row, unfolded into
overlapping patches of P rows at stride S (so the patch count is
(L - P) / S + 2 for S = 1), flattened time-major, linearly embedded with a
learned positional table, and encoded by pre-norm transformer blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import blocks
from .errors import ContractError, ShapeError
from .numkit import SeededRng, Tensor, add, matmul, tensor


@dataclass(frozen=True)
class PatchConfig:
    window_len: int = 40
    n_channels: int = 14
    patch_len: int = 4
    stride: int = 1
    d_model: int = 64
    n_heads: int = 1
    n_blocks: int = 2

    def __post_init__(self):
        if self.patch_len > self.window_len:
            raise ContractError(
                f"patch length {self.patch_len} exceeds window {self.window_len}"
            )
        if self.stride < 1:
            raise ContractError(f"stride must be >= 1, got {self.stride}")
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by heads {self.n_heads}"
            )

    @property
    def n_patches(self) -> int:
        return (self.window_len - self.patch_len) // self.stride + 2

    @property
    def patch_dim(self) -> int:
        return self.patch_len * self.n_channels


def replicate_pad(window: np.ndarray) -> np.ndarray:
    """Duplicate the last row once so unfolding yields (L-P)/S + 2 patches."""
    if window.ndim != 2 or window.shape[0] < 1:
        raise ContractError(f"replicate_pad needs a non-empty L x M window, got {window.shape}")
    return np.concatenate([window, window[-1:]], axis=0)


def unfold_patches(padded: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Overlapping patches, each flattened time-major (rows concatenated)."""
    n_rows = padded.shape[0]
    if patch_len > n_rows:
        raise ContractError(f"patch length {patch_len} exceeds padded length {n_rows}")
    starts = range(0, n_rows - patch_len + 1, stride)
    return np.stack([padded[s : s + patch_len].reshape(-1) for s in starts])


def init_params(
    cfg: PatchConfig, rng: SeededRng, prefix: str = "temporal"
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    params[f"{prefix}.w_emb"] = Tensor(
        rng.normal_array((cfg.patch_dim, cfg.d_model), std=0.02),
        requires_grad=True,
        name=f"{prefix}.w_emb",
    )
    params[f"{prefix}.e_pos"] = Tensor(
        rng.normal_array((cfg.n_patches, cfg.d_model), std=0.02),
        requires_grad=True,
        name=f"{prefix}.e_pos",
    )
    blocks.init_encoder(params, prefix, cfg.n_blocks, cfg.d_model, rng)
    return params


def embed_patches(
    x_patches: Tensor, params: dict[str, Tensor], prefix: str = "temporal"
) -> Tensor:
    w_emb = params[f"{prefix}.w_emb"]
    e_pos = params[f"{prefix}.e_pos"]
    if x_patches.shape[1] != w_emb.shape[0]:
        raise ShapeError(
            f"embed_patches: patch dim {x_patches.shape[1]} != embedding rows {w_emb.shape[0]}"
        )
    if x_patches.shape[0] != e_pos.shape[0]:
        raise ShapeError(
            f"embed_patches: {x_patches.shape[0]} patches vs positional table {e_pos.shape[0]}"
        )
    return add(matmul(x_patches, w_emb), e_pos)


def encode(
    z0: Tensor,
    params: dict[str, Tensor],
    cfg: PatchConfig,
    prefix: str = "temporal",
    attn_sink: Optional[list[np.ndarray]] = None,
) -> Tensor:
    return blocks.encoder_forward(
        z0,
        params,
        prefix,
        cfg.n_blocks,
        cfg.n_heads,
        attn_sink=attn_sink,
        check_finite=True,
    )


def forward(
    window: np.ndarray,
    params: dict[str, Tensor],
    cfg: PatchConfig,
    prefix: str = "temporal",
    attn_sink: Optional[list[np.ndarray]] = None,
) -> Tensor:
    """window (L, M) -> temporal features (N, d_model)."""
    if window.shape != (cfg.window_len, cfg.n_channels):
        raise ShapeError(
            f"window shape {window.shape} != ({cfg.window_len}, {cfg.n_channels})"
        )
    padded = replicate_pad(window)
    x_patches = tensor(unfold_patches(padded, cfg.patch_len, cfg.stride))
    z0 = embed_patches(x_patches, params, prefix)
    return encode(z0, params, cfg, prefix, attn_sink=attn_sink)
