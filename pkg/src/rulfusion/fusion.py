"""Temporal-query attention over the multi-modal context, plus the
regression head.

Temporal patch features form the queries; the context (either the pooled
language-model vector broadcast to every patch row, or the individual
language-model token outputs) is projected into keys and values.  In
broadcast mode all key rows are identical, so the attention is exactly
uniform and every retrieved row equals the single projected value row:
fusion degenerates to global-vector concatenation.  This equivalence is
asserted by tests; the token-keys mode is the non-degenerate alternative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import blocks
from .errors import ConfigError, NumericError, ShapeError
from .numkit import (
    SeededRng,
    Tensor,
    add,
    concat_last,
    dropout,
    gelu,
    matmul,
    mean_rows,
    repeat_rows,
    reshape,
    smul,
    softmax_rows,
    transpose2d,
)

FUSION_MODES = ("broadcast_global", "token_keys")


@dataclass(frozen=True)
class FusionConfig:
    d_temporal: int = 64
    d_context: int = 96
    d_key: int = 64
    d_value: int = 32
    d_fused: int = 64
    mlp_hidden: int = 512
    dropout_rate: float = 0.5
    mode: str = "broadcast_global"
    residual: bool = False
    rul_cap: float = 125.0

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")


def init_fusion_params(
    cfg: FusionConfig, rng: SeededRng, prefix: str = "tmaf", head_prefix: str = "head"
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}

    def weight(name: str, shape: tuple[int, int]) -> None:
        params[name] = Tensor(
            rng.normal_array(shape, std=0.02), requires_grad=True, name=name
        )

    weight(f"{prefix}.w_q", (cfg.d_temporal, cfg.d_key))
    weight(f"{prefix}.w_k", (cfg.d_context, cfg.d_key))
    weight(f"{prefix}.w_v", (cfg.d_context, cfg.d_value))
    weight(f"{prefix}.w_out", (cfg.d_temporal + cfg.d_value, cfg.d_fused))
    weight(f"{prefix}.w_res", (cfg.d_value, cfg.d_temporal))
    blocks.init_linear(params, f"{head_prefix}.mlp1", cfg.d_fused, cfg.mlp_hidden, rng)
    blocks.init_linear(params, f"{head_prefix}.mlp2", cfg.mlp_hidden, 1, rng)
    return params


def project_qkv(
    f_ts: Tensor,
    context: Tensor,
    params: dict[str, Tensor],
    cfg: FusionConfig,
    prefix: str = "tmaf",
) -> tuple[Tensor, Tensor, Tensor]:
    """Queries from temporal rows; keys/values from the context.

    broadcast_global: context is the pooled vector, replicated to one
    key/value row per temporal patch.  token_keys: context is the matrix of
    real token outputs, one key/value row per token.
    """
    if f_ts.shape[1] != cfg.d_temporal:
        raise ShapeError(f"temporal width {f_ts.shape[1]} != {cfg.d_temporal}")
    q = matmul(f_ts, params[f"{prefix}.w_q"])
    n = f_ts.shape[0]
    if cfg.mode == "broadcast_global":
        if context.shape != (cfg.d_context,):
            raise ShapeError(
                f"broadcast mode needs a ({cfg.d_context},) context, got {context.shape}"
            )
        row = reshape(context, (1, cfg.d_context))
        k = repeat_rows(matmul(row, params[f"{prefix}.w_k"]), n)
        v = repeat_rows(matmul(row, params[f"{prefix}.w_v"]), n)
    else:
        if context.data.ndim != 2 or context.shape[1] != cfg.d_context:
            raise ShapeError(
                f"token mode needs (tokens, {cfg.d_context}) context, got {context.shape}"
            )
        k = matmul(context, params[f"{prefix}.w_k"])
        v = matmul(context, params[f"{prefix}.w_v"])
    return q, k, v


def attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention; returns (retrieved rows, weight matrix)."""
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"key width {k.shape[1]} != query width {q.shape[1]}")
    scores = smul(matmul(q, transpose2d(k)), 1.0 / math.sqrt(q.shape[1]))
    if not np.isfinite(scores.data).all():
        raise NumericError("attention scores are non-finite")
    weights = softmax_rows(scores)
    return matmul(weights, v), weights


def fuse_and_predict(
    f_ts: Tensor,
    f_attn: Tensor,
    params: dict[str, Tensor],
    cfg: FusionConfig,
    rng: SeededRng | None = None,
    training: bool = False,
    prefix: str = "tmaf",
    head_prefix: str = "head",
) -> Tensor:
    """Fuse retrieved context into the temporal stream and regress.

    Returns the raw normalized prediction (target scale RUL / cap); training
    keeps it unclamped so gradients flow, reporting clamps at zero and
    rescales to cycles via ``to_cycles``.
    """
    if f_ts.shape[0] != f_attn.shape[0]:
        raise ShapeError(
            f"row counts differ: temporal {f_ts.shape[0]}, retrieved {f_attn.shape[0]}"
        )
    if cfg.residual:
        fused = add(f_ts, matmul(f_attn, params[f"{prefix}.w_res"]))
    else:
        fused = matmul(concat_last([f_ts, f_attn]), params[f"{prefix}.w_out"])
    pooled = reshape(mean_rows(fused), (1, fused.shape[1]))
    hidden = gelu(blocks.linear(pooled, params, f"{head_prefix}.mlp1"))
    hidden = dropout(hidden, cfg.dropout_rate, rng, training)
    out = blocks.linear(hidden, params, f"{head_prefix}.mlp2")
    if not np.isfinite(out.data).all():
        raise NumericError("regression head produced a non-finite prediction")
    return reshape(out, ())


def to_cycles(raw_normalized: float, cap: float = 125.0) -> float:
    """Physical-cycle prediction: clamp at zero, rescale by the label cap."""
    return max(0.0, raw_normalized) * cap
