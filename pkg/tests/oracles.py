"""Independent brute-force oracles.

Everything here is deliberately naive (plain Python loops, direct sums) and
shares no code path with the library implementations it checks.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def matmul_triple_loop(a, b):
    m, k = len(a), len(a[0])
    k2, n = len(b), len(b[0])
    assert k == k2
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return np.array(out)


def rmse_loop(pred, truth):
    assert len(pred) == len(truth) and pred
    total = 0.0
    for p, t in zip(pred, truth):
        total += (p - t) * (p - t)
    return math.sqrt(total / len(pred))


def score_loop(pred, truth):
    total = 0.0
    for p, t in zip(pred, truth):
        d = p - t
        if d < 0:
            total += math.exp(-d / 13.0) - 1.0
        else:
            total += math.exp(d / 10.0) - 1.0
    return total


def mae_loop(pred, truth):
    return sum(abs(p - t) for p, t in zip(pred, truth)) / len(pred)


def mape_loop(pred, truth):
    terms = [abs(p - t) / abs(t) for p, t in zip(pred, truth) if t != 0.0]
    return 100.0 * sum(terms) / len(terms) if terms else 0.0


def window_count_enumeration(total_len, window_len):
    """Count sliding windows by listing every end position."""
    return len([end for end in range(window_len, total_len + 1)])


def patch_count_enumeration(window_len, patch_len, stride):
    """Patches obtained by unfolding the one-row-padded window."""
    padded = window_len + 1
    return len(list(range(0, padded - patch_len + 1, stride)))


def rp_pairwise(signal, m, tau, quantile):
    """All-pairs recurrence matrix via explicit loops."""
    n = len(signal) - (m - 1) * tau
    vectors = [[signal[i + j * tau] for j in range(m)] for i in range(n)]
    dists = [[0.0] * n for _ in range(n)]
    upper = []
    for i in range(n):
        for j in range(n):
            d = math.sqrt(sum((vectors[i][k] - vectors[j][k]) ** 2 for k in range(m)))
            dists[i][j] = d
            if j > i:
                upper.append(d)
    eps = float(np.quantile(np.array(upper), quantile))
    return np.array([[1.0 if dists[i][j] <= eps else 0.0 for j in range(n)] for i in range(n)])


def dft_frame_magnitudes(frame):
    """Direct DFT sum, one-sided bins."""
    n = len(frame)
    mags = []
    for k in range(n // 2 + 1):
        acc = 0.0 + 0.0j
        for t in range(n):
            acc += frame[t] * cmath.exp(-2j * math.pi * k * t / n)
        mags.append(abs(acc))
    return np.array(mags)


def cwt_coefficient(signal, scale, shift, omega0):
    """Direct sum over the whole signal: x(t) conj(psi((t-b)/a)) / sqrt(a)."""
    acc = 0.0 + 0.0j
    for t in range(len(signal)):
        u = (t - shift) / scale
        psi = math.pi**-0.25 * cmath.exp(1j * omega0 * u) * math.exp(-0.5 * u * u)
        acc += signal[t] * psi.conjugate()
    return abs(acc) / math.sqrt(scale)


def bpe_best_pair(chunks_with_freq):
    """Most frequent adjacent symbol pair; ties -> lexicographically smallest.

    chunks_with_freq: list of (tuple_of_bytes_symbols, count).
    """
    counts = {}
    for symbols, freq in chunks_with_freq:
        for i in range(len(symbols) - 1):
            pair = (symbols[i], symbols[i + 1])
            counts[pair] = counts.get(pair, 0) + freq
    if not counts:
        return None, 0
    best_count = max(counts.values())
    best = min(pair for pair, c in counts.items() if c == best_count)
    return best, best_count
