"""Pre-norm transformer blocks shared by the temporal, vision, and language
encoders.

Each block is x + MHSA(LN(x)) followed by x + FFN(LN(x)) with a GELU
feed-forward at 4x width, and the stack ends with a final layer norm.
Attention is scaled dot-product over column-split heads; an optional
additive bias matrix (not differentiated) realises causal or key masking.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import NumericError
from .numkit import (
    SeededRng,
    Tensor,
    add,
    concat_last,
    layer_norm,
    gelu,
    matmul,
    slice_cols,
    smul,
    softmax_rows,
    tensor,
    transpose2d,
)

FFN_MULT = 4


def init_linear(
    params: dict[str, Tensor], name: str, d_in: int, d_out: int, rng: SeededRng
) -> None:
    params[f"{name}.w"] = Tensor(
        rng.normal_array((d_in, d_out), std=0.02), requires_grad=True, name=f"{name}.w"
    )
    params[f"{name}.b"] = Tensor(
        np.zeros(d_out), requires_grad=True, name=f"{name}.b"
    )


def linear(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return add(matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def init_layer_norm(params: dict[str, Tensor], name: str, d: int) -> None:
    params[f"{name}.gamma"] = Tensor(np.ones(d), requires_grad=True, name=f"{name}.gamma")
    params[f"{name}.beta"] = Tensor(np.zeros(d), requires_grad=True, name=f"{name}.beta")


def apply_layer_norm(x: Tensor, params: dict[str, Tensor], name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def init_encoder(
    params: dict[str, Tensor],
    prefix: str,
    depth: int,
    d_model: int,
    rng: SeededRng,
) -> None:
    for i in range(depth):
        blk = f"{prefix}.block{i}"
        init_layer_norm(params, f"{blk}.ln1", d_model)
        for proj in ("wq", "wk", "wv", "wo"):
            init_linear(params, f"{blk}.{proj}", d_model, d_model, rng)
        init_layer_norm(params, f"{blk}.ln2", d_model)
        init_linear(params, f"{blk}.ffn1", d_model, FFN_MULT * d_model, rng)
        init_linear(params, f"{blk}.ffn2", FFN_MULT * d_model, d_model, rng)
    init_layer_norm(params, f"{prefix}.ln_final", d_model)


def self_attention(
    x: Tensor,
    params: dict[str, Tensor],
    blk: str,
    n_heads: int,
    mask_bias: Optional[np.ndarray] = None,
    attn_sink: Optional[list[np.ndarray]] = None,
) -> Tensor:
    d_model = x.shape[-1]
    d_head = d_model // n_heads
    q = linear(x, params, f"{blk}.wq")
    k = linear(x, params, f"{blk}.wk")
    v = linear(x, params, f"{blk}.wv")
    head_outputs = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = smul(matmul(qh, transpose2d(kh)), 1.0 / math.sqrt(d_head))
        if mask_bias is not None:
            scores = add(scores, tensor(mask_bias))
        weights = softmax_rows(scores)
        if attn_sink is not None:
            attn_sink.append(weights.data.copy())
        head_outputs.append(matmul(weights, vh))
    merged = head_outputs[0] if n_heads == 1 else concat_last(head_outputs)
    return linear(merged, params, f"{blk}.wo")


def encoder_forward(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    depth: int,
    n_heads: int,
    mask_bias: Optional[np.ndarray] = None,
    attn_sink: Optional[list[np.ndarray]] = None,
    check_finite: bool = False,
) -> Tensor:
    for i in range(depth):
        blk = f"{prefix}.block{i}"
        attended = self_attention(
            apply_layer_norm(x, params, f"{blk}.ln1"),
            params,
            blk,
            n_heads,
            mask_bias=mask_bias,
            attn_sink=attn_sink,
        )
        x = add(x, attended)
        hidden = gelu(linear(apply_layer_norm(x, params, f"{blk}.ln2"), params, f"{blk}.ffn1"))
        x = add(x, linear(hidden, params, f"{blk}.ffn2"))
        if check_finite and not np.isfinite(x.data).all():
            raise NumericError(f"{prefix} block {i} produced non-finite activations")
    return apply_layer_norm(x, params, f"{prefix}.ln_final")


def causal_bias(n: int) -> np.ndarray:
    """Additive upper-triangular -1e30 bias (position i attends to <= i)."""
    bias = np.zeros((n, n))
    bias[np.triu_indices(n, k=1)] = -1e30
    return bias
