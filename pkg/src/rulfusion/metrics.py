"""Evaluation metrics: RMSE, the asymmetric exponential score, MAE, MAPE.

The score penalizes late predictions (pred >= truth, divisor 10) more than
early ones (divisor 13); equality lands on the late branch where the
contribution is zero either way.  MAPE skips zero-truth samples (counted and
warned) since the ratio is undefined there.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .errors import ContractError

logger = logging.getLogger(__name__)

SCORE_EARLY_DIVISOR = 13.0
SCORE_LATE_DIVISOR = 10.0


def _check_pair(pred: Sequence[float], truth: Sequence[float], op: str) -> None:
    if len(pred) != len(truth):
        raise ContractError(f"{op}: length mismatch {len(pred)} vs {len(truth)}")
    if len(pred) == 0:
        raise ContractError(f"{op}: empty input")


def rmse(pred: Sequence[float], truth: Sequence[float]) -> float:
    _check_pair(pred, truth, "rmse")
    return math.sqrt(sum((p - t) ** 2 for p, t in zip(pred, truth)) / len(pred))


def score(pred: Sequence[float], truth: Sequence[float]) -> float:
    _check_pair(pred, truth, "score")
    total = 0.0
    for p, t in zip(pred, truth):
        d = p - t
        if d < 0.0:
            total += math.exp(-d / SCORE_EARLY_DIVISOR) - 1.0
        else:
            total += math.exp(d / SCORE_LATE_DIVISOR) - 1.0
    return total


def mae(pred: Sequence[float], truth: Sequence[float]) -> float:
    _check_pair(pred, truth, "mae")
    return sum(abs(p - t) for p, t in zip(pred, truth)) / len(pred)


def mape(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Mean absolute percentage error over nonzero-truth samples."""
    _check_pair(pred, truth, "mape")
    terms = [abs(p - t) / abs(t) for p, t in zip(pred, truth) if t != 0.0]
    skipped = len(pred) - len(terms)
    if skipped:
        logger.warning("mape: skipped %d zero-truth sample(s)", skipped)
    if not terms:
        return 0.0
    return 100.0 * sum(terms) / len(terms)


@dataclass
class MetricsReport:
    rmse: float
    score: float
    mae: float
    mape: float
    n: int
    per_engine: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "rmse": self.rmse,
            "score": self.score,
            "mae": self.mae,
            "mape": self.mape,
            "n": self.n,
        }
        return json.dumps(payload, sort_keys=True)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n")


def compute_report(
    unit_ids: Sequence[int], pred: Sequence[float], truth: Sequence[float]
) -> MetricsReport:
    _check_pair(pred, truth, "report")
    per_engine = [
        {
            "unit_id": int(u),
            "true_rul": float(t),
            "pred_rul": float(p),
            "abs_err": abs(float(p) - float(t)),
        }
        for u, p, t in zip(unit_ids, pred, truth)
    ]
    return MetricsReport(
        rmse=rmse(pred, truth),
        score=score(pred, truth),
        mae=mae(pred, truth),
        mape=mape(pred, truth),
        n=len(pred),
        per_engine=per_engine,
    )
