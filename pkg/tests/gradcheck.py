"""Central finite-difference gradient checker (the tests' independent route).

Pass criterion per entry: |analytic - numeric| < 1e-7 absolutely, or the
relative error against the larger magnitude is below rtol.  h = 1e-5 in
float64 keeps truncation error around 1e-10 for smooth ops.
"""

from __future__ import annotations

import numpy as np

from rulfusion.numkit import Tape, Tensor


def analytic_grads(forward, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = forward()
    tape.backward(loss)
    return {name: p.grad.copy() for name, p in params.items()}


def check_grads(
    forward,
    params: dict[str, Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    max_entries_per_param: int | None = None,
    entry_rng: np.random.Generator | None = None,
) -> int:
    """Compare every (or a sampled subset of) parameter entry; returns the
    number of entries checked.  Raises AssertionError on the first miss."""
    reference = analytic_grads(forward, params)
    checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad_flat = reference[name].reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            rng = entry_rng if entry_rng is not None else np.random.default_rng(0)
            indices = sorted(rng.choice(n, size=max_entries_per_param, replace=False))
        else:
            indices = range(n)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = forward().item()
            flat[i] = orig - h
            f_minus = forward().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = grad_flat[i]
            diff = abs(ana - numeric)
            denom = max(abs(ana), abs(numeric))
            ok = diff < atol or (denom > 0 and diff / denom < rtol)
            assert ok, (
                f"gradient mismatch for {name}[{i}]: analytic {ana!r}, "
                f"numeric {numeric!r}, rel {diff / max(denom, 1e-300):.3e}"
            )
            checked += 1
    return checked
