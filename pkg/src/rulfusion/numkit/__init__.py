"""Numeric core: float64 tensors, reverse-mode tape, Adam, seeded RNG."""

from .checkpoint import load_params, save_params
from .optim import AdamState, adam_step
from .rng import SeededRng
from .tensor import (
    Tape,
    Tensor,
    add,
    concat_last,
    concat_rows,
    dropout,
    gelu,
    layer_norm,
    layer_norm_plain,
    matmul,
    mean_all,
    mean_rows,
    mul,
    ones,
    relu,
    repeat_rows,
    reshape,
    resize_bilinear,
    sadd,
    scatter_rows_add,
    slice_cols,
    slice_rows,
    smul,
    softmax_rows,
    sub,
    sum_all,
    sum_rows,
    take_flat,
    take_rows,
    tensor,
    transpose2d,
    zeros,
)

__all__ = [
    "AdamState",
    "SeededRng",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "concat_last",
    "concat_rows",
    "dropout",
    "gelu",
    "layer_norm",
    "layer_norm_plain",
    "load_params",
    "matmul",
    "mean_all",
    "mean_rows",
    "mul",
    "ones",
    "relu",
    "repeat_rows",
    "reshape",
    "resize_bilinear",
    "sadd",
    "save_params",
    "scatter_rows_add",
    "slice_cols",
    "slice_rows",
    "smul",
    "softmax_rows",
    "sub",
    "sum_all",
    "sum_rows",
    "take_flat",
    "take_rows",
    "tensor",
    "transpose2d",
    "zeros",
]
