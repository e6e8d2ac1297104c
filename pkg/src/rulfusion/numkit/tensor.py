"""Dense float64 tensors with reverse-mode differentiation.

Storage is a numpy float64 array; every differentiable operation records a
node on the active tape (creation order = topological order), and
``Tape.backward`` replays the nodes once in reverse, accumulating chain-rule
contributions into leaf ``.grad`` buffers.  There is no broadcasting beyond
what the listed operations need (row-bias addition, scalar factors), no
higher-order derivatives, and no view aliasing: every op materialises its
output.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, ContractError, NumericError, ShapeError
from .rng import SeededRng

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return smul(self, -1.0)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad, name)


def ones(shape, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float64), requires_grad, name)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Single-writer operation record for one forward pass.

    Nodes are appended in creation order; ``backward`` visits them exactly
    once in reverse.  A tape is activated with ``with Tape() as tape:`` and
    may be consumed (backward) after the block exits.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _pop_tape(self)

    def backward(self, loss: Tensor) -> int:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

        Returns the number of leaf tensors that received gradient.  Leaves
        not reached keep whatever ``.grad`` they had (zero them beforehand
        to realise the "untouched parameters get zero gradient" contract).
        """
        if loss.data.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        if not loss._tracked:
            raise ContractError("loss is not connected to this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        touched = 0
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.out), None)
            holders.pop(id(node.out), None)
            if gout is None:
                continue
            gins = node.backward_fn(gout)
            for inp, gin in zip(node.inputs, gins):
                if gin is None or not inp._tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
                    holders[key] = inp
        for key, g in grads.items():
            leaf = holders[key]
            if leaf.requires_grad:
                if leaf.grad is None:
                    leaf.grad = np.array(g, dtype=np.float64)
                else:
                    leaf.grad = leaf.grad + g
                touched += 1
        return touched


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape) -> None:
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape) -> None:
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise ContractError("tape stack corrupted: exiting a tape that is not active")
    _TAPE_STACK.pop()


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.nodes.append(_Node(out, inputs, backward_fn))
    return out


def _sum_to_bias(g: np.ndarray, bias_shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a full-shape gradient onto a trailing-axis bias vector."""
    extra = g.ndim - len(bias_shape)
    return g.sum(axis=tuple(range(extra))) if extra > 0 else g


def _check_bias_broadcast(a: Tensor, b: Tensor, opname: str) -> bool:
    """True if b is a trailing-axis vector broadcast over a."""
    if a.shape == b.shape:
        return False
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _check_bias_broadcast(a, b, "add")

    def backward(g):
        gb = _sum_to_bias(g, b.shape) if broadcast else g
        return (g, gb)

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _check_bias_broadcast(a, b, "sub")

    def backward(g):
        gb = _sum_to_bias(g, b.shape) if broadcast else g
        return (g, -gb)

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _check_bias_broadcast(a, b, "mul")
    a_data, b_data = a.data, b.data

    def backward(g):
        ga = g * b_data
        gb = g * a_data
        if broadcast:
            gb = _sum_to_bias(gb, b.shape)
        return (ga, gb)

    return _make(a_data * b_data, (a, b), backward)


def smul(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), lambda g: (g * s,))


def sadd(a: Tensor, s: float) -> Tensor:
    return _make(a.data + s, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        return (g @ b_data.T, a_data.T @ g)

    return _make(a_data @ b_data, (a, b), backward)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d needs a matrix, got shape {x.shape}")
    return _make(np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old_shape),))


# ---------------------------------------------------------------------------
# Nonlinearities and normalisation
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (smooth, so finite differences behave)."""
    xd = x.data
    inner = _SQRT_2_OVER_PI * (xd + _GELU_C * xd**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * xd**2)
        dy = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t**2) * d_inner
        return (g * dy,)

    return _make(0.5 * xd * (1.0 + t), (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got shape {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis (biased variance), then affine.

    eps sits inside the sqrt; at 1e-12 the normalised variance of any
    non-degenerate row stays within 1e-8 of 1.
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        gy = g * gamma.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gy - m1 - xhat * m2)
        ggamma = _sum_to_bias(g * xhat, gamma.shape)
        gbeta = _sum_to_bias(g, beta.shape)
        return (gx, ggamma, gbeta)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def layer_norm_plain(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise over the last axis without affine terms."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g):
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - m1 - xhat * m2),)

    return _make(xhat, (x,), backward)


def dropout(x: Tensor, p: float, rng: Optional[SeededRng], training: bool) -> Tensor:
    """Inverted dropout: train-time keep-scale 1/(1-p), eval is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    keep = (rng.uniform_array(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# Shape surgery
# ---------------------------------------------------------------------------


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ContractError("concat_last needs at least one tensor")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last: leading dims differ: {[p.shape for p in parts]}"
            )
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(
            g[..., offsets[i] : offsets[i + 1]] for i in range(len(parts))
        )

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices along axis 0."""
    if not parts:
        raise ContractError("concat_rows needs at least one tensor")
    width = parts[0].shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[-1] != width:
            raise ShapeError(
                f"concat_rows: row widths differ: {[p.shape for p in parts]}"
            )
    counts = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + counts)

    def backward(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[start:stop] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[start:stop]), (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a matrix, got shape {x.shape}")
    shape = x.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[:, start:stop] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[:, start:stop]), (x,), backward)


def repeat_rows(v: Tensor, m: int) -> Tensor:
    """Tile a vector (or single row) into m identical rows."""
    row = v.data.reshape(-1)
    out = np.tile(row, (m, 1))

    def backward(g):
        return (g.sum(axis=0).reshape(v.shape),)

    return _make(out, (v,), backward)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a matrix; gradient scatter-adds into the table."""
    if table.data.ndim != 2:
        raise ShapeError(f"take_rows needs a matrix table, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"take_rows: index out of range [0, {table.shape[0]}): "
            f"min {idx.min()}, max {idx.max()}"
        )
    shape = table.data.shape

    def backward(g):
        gt = np.zeros(shape, dtype=np.float64)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.data[idx], (table,), backward)


def take_flat(x: Tensor, flat_idx: np.ndarray, out_shape: tuple[int, ...]) -> Tensor:
    """Gather arbitrary elements by flattened index (backs im2col and patchify)."""
    idx = np.asarray(flat_idx, dtype=np.int64)
    in_size = x.data.size
    in_shape = x.data.shape

    def backward(g):
        gflat = np.zeros(in_size, dtype=np.float64)
        np.add.at(gflat, idx.ravel(), g.ravel())
        return (gflat.reshape(in_shape),)

    return _make(x.data.ravel()[idx.ravel()].reshape(out_shape), (x,), backward)


def scatter_rows_add(base: Tensor, rows: Tensor, ids: np.ndarray) -> Tensor:
    """out = base with ``rows`` added at row positions ``ids`` (ids unique)."""
    idx = np.asarray(ids, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ContractError("scatter_rows_add requires unique row indices")
    out = base.data.copy()
    out[idx] += rows.data

    def backward(g):
        return (g, g[idx])

    return _make(out, (base, rows), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return _make(
        np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),)
    )


def mean_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    n = x.data.size
    return _make(
        np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),)
    )


def sum_rows(x: Tensor) -> Tensor:
    """(m, n) -> (n,) sum over axis 0."""
    if x.data.ndim != 2:
        raise ShapeError(f"sum_rows needs a matrix, got shape {x.shape}")
    m = x.shape[0]
    return _make(
        x.data.sum(axis=0), (x,), lambda g: (np.tile(g, (m, 1)),)
    )


def mean_rows(x: Tensor) -> Tensor:
    """(m, n) -> (n,) mean over axis 0."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows needs a matrix, got shape {x.shape}")
    m = x.shape[0]
    return _make(
        x.data.mean(axis=0), (x,), lambda g: (np.tile(g / m, (m, 1)),)
    )


# ---------------------------------------------------------------------------
# Bilinear resize
# ---------------------------------------------------------------------------


def _resize_maps(h_in: int, w_in: int, h_out: int, w_out: int):
    """Half-pixel-center sampling grid: corner indices and blend weights."""

    def axis_maps(n_in: int, n_out: int):
        coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        coords = np.clip(coords, 0.0, n_in - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = coords - lo
        return lo, hi, frac

    r_lo, r_hi, r_frac = axis_maps(h_in, h_out)
    c_lo, c_hi, c_frac = axis_maps(w_in, w_out)
    return (r_lo, r_hi, r_frac), (c_lo, c_hi, c_frac)


def resize_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Bilinear 2-D resize with half-pixel centers (edge-clamped)."""
    if x.data.ndim != 2:
        raise ShapeError(f"resize_bilinear needs a matrix, got shape {x.shape}")
    h_in, w_in = x.shape
    (r_lo, r_hi, r_frac), (c_lo, c_hi, c_frac) = _resize_maps(h_in, w_in, h_out, w_out)
    wr = r_frac[:, None]
    wc = c_frac[None, :]
    w00 = (1 - wr) * (1 - wc)
    w01 = (1 - wr) * wc
    w10 = wr * (1 - wc)
    w11 = wr * wc
    xd = x.data
    out = (
        w00 * xd[np.ix_(r_lo, c_lo)]
        + w01 * xd[np.ix_(r_lo, c_hi)]
        + w10 * xd[np.ix_(r_hi, c_lo)]
        + w11 * xd[np.ix_(r_hi, c_hi)]
    )

    def backward(g):
        gx = np.zeros((h_in, w_in), dtype=np.float64)
        for wgt, rows, cols in (
            (w00, r_lo, c_lo),
            (w01, r_lo, c_hi),
            (w10, r_hi, c_lo),
            (w11, r_hi, c_hi),
        ):
            flat = (rows[:, None] * w_in + cols[None, :]).ravel()
            np.add.at(gx.reshape(-1), flat, (g * wgt).ravel())
        return (gx,)

    return _make(out, (x,), backward)
