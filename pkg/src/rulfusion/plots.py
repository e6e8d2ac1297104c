"""Deterministic hand-written SVG charts.

No plotting library: identical inputs must produce byte-identical files, so
every coordinate is formatted with fixed precision and nothing date- or
id-stamped is emitted.  Three chart kinds cover the run artifacts: stacked
prediction/error panels, multi-panel metric-vs-ratio lines, and grouped
bars for the encoder ablation.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

from .errors import ContractError

PANEL_W = 640
PANEL_H = 280
MARGIN = 54

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axis_range(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Panel:
    """One cartesian panel at a fixed offset inside the SVG canvas."""

    def __init__(self, x0: float, y0: float, title: str, x_label: str, y_label: str):
        self.x0, self.y0 = x0, y0
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.parts: list[str] = []

    def _scale(self, xs, ys):
        x_lo, x_hi = _axis_range(xs)
        y_lo, y_hi = _axis_range(ys)
        w = PANEL_W - 2 * MARGIN
        h = PANEL_H - 2 * MARGIN

        def to_px(x, y):
            px = self.x0 + MARGIN + (x - x_lo) / (x_hi - x_lo) * w
            py = self.y0 + PANEL_H - MARGIN - (y - y_lo) / (y_hi - y_lo) * h
            return px, py

        return to_px, (x_lo, x_hi, y_lo, y_hi)

    def frame(self, bounds) -> None:
        x_lo, x_hi, y_lo, y_hi = bounds
        left = self.x0 + MARGIN
        right = self.x0 + PANEL_W - MARGIN
        top = self.y0 + MARGIN
        bottom = self.y0 + PANEL_H - MARGIN
        self.parts.append(
            f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(right - left)}" '
            f'height="{_fmt(bottom - top)}" fill="none" stroke="#444" stroke-width="1"/>'
        )
        self.parts.append(
            f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(self.y0 + 20)}" '
            f'text-anchor="middle" font-size="13" font-family="sans-serif">{self.title}</text>'
        )
        self.parts.append(
            f'<text x="{_fmt((left + right) / 2)}" y="{_fmt(bottom + 32)}" '
            f'text-anchor="middle" font-size="11" font-family="sans-serif">{self.x_label}</text>'
        )
        self.parts.append(
            f'<text x="{_fmt(self.x0 + 14)}" y="{_fmt((top + bottom) / 2)}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif" '
            f'transform="rotate(-90 {_fmt(self.x0 + 14)} {_fmt((top + bottom) / 2)})">{self.y_label}</text>'
        )
        for val, px, py, anchor in (
            (x_lo, left, bottom + 14, "start"),
            (x_hi, right, bottom + 14, "end"),
        ):
            self.parts.append(
                f'<text x="{_fmt(px)}" y="{_fmt(py)}" text-anchor="{anchor}" '
                f'font-size="10" font-family="sans-serif">{val:.3g}</text>'
            )
        for val, py in ((y_lo, bottom), (y_hi, top + 4)):
            self.parts.append(
                f'<text x="{_fmt(left - 6)}" y="{_fmt(py)}" text-anchor="end" '
                f'font-size="10" font-family="sans-serif">{val:.3g}</text>'
            )

    def lines(self, xs: Sequence[float], series: dict[str, Sequence[float]]) -> None:
        all_y = [v for ys in series.values() for v in ys]
        to_px, bounds = self._scale(xs, all_y)
        self.frame(bounds)
        for i, (label, ys) in enumerate(series.items()):
            color = _COLORS[i % len(_COLORS)]
            points = " ".join(
                f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(x, y) for x, y in zip(xs, ys))
            )
            self.parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
            self.parts.append(
                f'<text x="{_fmt(self.x0 + PANEL_W - MARGIN + 4)}" '
                f'y="{_fmt(self.y0 + MARGIN + 14 * (i + 1))}" font-size="10" '
                f'font-family="sans-serif" fill="{color}">{label}</text>'
            )

    def bars(self, labels: Sequence[str], values: Sequence[float]) -> None:
        to_px, bounds = self._scale(range(len(labels) + 1), list(values) + [0.0])
        self.frame(bounds)
        x_lo, x_hi, y_lo, y_hi = bounds
        zero_px = to_px(0, max(0.0, y_lo))[1]
        for i, (label, v) in enumerate(zip(labels, values)):
            left_px, top_px = to_px(i + 0.25, v)
            right_px, _ = to_px(i + 0.75, v)
            self.parts.append(
                f'<rect x="{_fmt(left_px)}" y="{_fmt(min(top_px, zero_px))}" '
                f'width="{_fmt(right_px - left_px)}" height="{_fmt(abs(zero_px - top_px))}" '
                f'fill="{_COLORS[i % len(_COLORS)]}"/>'
            )
            self.parts.append(
                f'<text x="{_fmt((left_px + right_px) / 2)}" '
                f'y="{_fmt(self.y0 + PANEL_H - MARGIN + 14)}" text-anchor="middle" '
                f'font-size="10" font-family="sans-serif">{label}</text>'
            )


def _write_svg(panels: list[_Panel], width: int, height: int, path: Union[str, Path]) -> None:
    body = "\n".join(part for panel in panels for part in panel.parts)
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n<rect width="{width}" height="{height}" '
        f'fill="white"/>\n{body}\n</svg>\n'
    )
    Path(path).write_text(svg)


def render_prediction_panels(
    per_engine: list[dict], path: Union[str, Path], title: str = "RUL predictions"
) -> None:
    """Top panel: truth vs prediction over engines sorted by true RUL
    (descending); bottom panel: absolute error in the same order."""
    if not per_engine:
        raise ContractError("render_prediction_panels needs at least one prediction")
    rows = sorted(per_engine, key=lambda r: (-r["true_rul"], r["unit_id"]))
    xs = list(range(len(rows)))
    top = _Panel(0, 0, title, "engine rank (by true RUL)", "RUL [cycles]")
    top.lines(
        xs,
        {
            "truth": [r["true_rul"] for r in rows],
            "prediction": [r["pred_rul"] for r in rows],
        },
    )
    bottom = _Panel(0, PANEL_H, "absolute error", "engine rank (by true RUL)", "|error|")
    bottom.lines(xs, {"abs error": [r["abs_err"] for r in rows]})
    _write_svg([top, bottom], PANEL_W, 2 * PANEL_H, path)


def render_fewshot_grid(rows: list[dict], path: Union[str, Path]) -> None:
    """2x2 panels: Score, MAE, MAPE, RMSE against the training ratio."""
    if not rows:
        raise ContractError("render_fewshot_grid needs at least one row")
    ratios = [r["ratio"] for r in rows]
    panels = []
    for i, key in enumerate(("score", "mae", "mape", "rmse")):
        panel = _Panel(
            (i % 2) * PANEL_W,
            (i // 2) * PANEL_H,
            key.upper(),
            "training ratio",
            key.upper(),
        )
        panel.lines(ratios, {key.upper(): [r[key] for r in rows]})
        panels.append(panel)
    _write_svg(panels, 2 * PANEL_W, 2 * PANEL_H, path)


def render_ablation_bars(rows: list[dict], path: Union[str, Path]) -> None:
    """Side-by-side RMSE and Score bars per encoder variant."""
    if not rows:
        raise ContractError("render_ablation_bars needs at least one row")
    labels = [r["variant"] for r in rows]
    left = _Panel(0, 0, "RMSE by visual encoder", "", "RMSE")
    left.bars(labels, [r["rmse"] for r in rows])
    right = _Panel(PANEL_W, 0, "Score by visual encoder", "", "Score")
    right.bars(labels, [r["score"] for r in rows])
    _write_svg([left, right], 2 * PANEL_W, PANEL_H, path)
