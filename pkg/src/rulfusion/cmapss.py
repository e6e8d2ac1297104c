"""Turbofan degradation data: parsing, sensor pruning, scaling, windowing.

File format is the NASA C-MAPSS convention: whitespace-separated rows of
``unit cycle setting1..3 sensor1..21`` for train/test files and a single
RUL-at-cutoff column for RUL files.  Parsing is fail-fast with line numbers;
cycle sequences must run 1, 2, ..., T per engine.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

N_SENSORS = 21
N_SETTINGS = 3
N_COLUMNS = 2 + N_SETTINGS + N_SENSORS

# Sensors that stay flat over the whole lifecycle (1-based indices).
DEFAULT_DROPPED_SENSORS = frozenset({1, 5, 6, 10, 16, 18, 19})

RUL_CAP = 125.0


@dataclass(frozen=True)
class DatasetMeta:
    """Per-subset engine counts and environment complexity."""

    dataset_id: str
    train_units: int
    test_units: int
    n_conditions: int
    n_fault_modes: int


DATASET_META = {
    "FD001": DatasetMeta("FD001", 100, 100, 1, 1),
    "FD002": DatasetMeta("FD002", 260, 259, 6, 1),
    "FD003": DatasetMeta("FD003", 100, 100, 1, 2),
    "FD004": DatasetMeta("FD004", 249, 248, 6, 2),
}


@dataclass
class EngineTrajectory:
    """One engine's multivariate record, cycle-ordered."""

    unit_id: int
    cycles: np.ndarray  # (T,) ints, 1..T
    op_settings: np.ndarray  # (T, 3)
    sensors: np.ndarray  # (T, n_channels)

    def __post_init__(self):
        if len(self.cycles) != len(self.sensors):
            raise ParseError(
                f"unit {self.unit_id}: {len(self.sensors)} sensor rows for "
                f"{len(self.cycles)} cycles"
            )

    @property
    def length(self) -> int:
        return len(self.cycles)


@dataclass(frozen=True)
class SensorSelection:
    dropped_indices: frozenset[int] = DEFAULT_DROPPED_SENSORS

    def __post_init__(self):
        bad = [i for i in self.dropped_indices if not 1 <= i <= N_SENSORS]
        if bad:
            raise ConfigError(f"sensor indices outside 1..{N_SENSORS}: {sorted(bad)}")
        if len(self.dropped_indices) >= N_SENSORS:
            raise ConfigError("sensor selection would leave zero channels")

    @property
    def kept_count(self) -> int:
        return N_SENSORS - len(self.dropped_indices)

    @property
    def kept_indices(self) -> list[int]:
        """1-based kept sensor indices, original order."""
        return [i for i in range(1, N_SENSORS + 1) if i not in self.dropped_indices]


@dataclass
class NormStats:
    """Per-channel min/max fitted on the training split only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if (self.maximum < self.minimum).any():
            raise ConfigError("NormStats with max < min")


@dataclass
class WindowSample:
    unit_id: int
    end_cycle: int
    values: np.ndarray  # (L, M) in [0, 1]
    rul_label: float


@dataclass(frozen=True)
class FewShotPlan:
    ratio: float
    seed: int
    selected_units: tuple[int, ...]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_numeric_row(tokens: list[str], path: Path, line_no: int) -> list[float]:
    try:
        return [float(tok) for tok in tokens]
    except ValueError as exc:
        raise ParseError(f"{path}:{line_no}: non-numeric value ({exc})") from None


def parse_cmapss(
    path: Union[str, Path], kind: str
) -> Union[list[EngineTrajectory], list[float]]:
    """Parse one C-MAPSS text file.

    kind="train"/"test": returns trajectories grouped by unit id, cycle-ordered,
    with cycle contiguity (1..T step 1) validated per engine.
    kind="rul": returns the list of RUL-at-cutoff values (one per test engine).
    """
    if kind not in ("train", "test", "rul"):
        raise ConfigError(f"unknown file kind {kind!r}")
    path = Path(path)
    if not path.exists():
        raise ParseError(f"data file not found: {path}")

    if kind == "rul":
        values: list[float] = []
        with path.open() as fh:
            for line_no, line in enumerate(fh, start=1):
                tokens = line.split()
                if not tokens:
                    continue
                if len(tokens) != 1:
                    raise ParseError(
                        f"{path}:{line_no}: expected 1 column in RUL file, got {len(tokens)}"
                    )
                values.extend(_parse_numeric_row(tokens, path, line_no))
        return values

    rows_by_unit: dict[int, list[tuple[int, list[float]]]] = {}
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != N_COLUMNS:
                raise ParseError(
                    f"{path}:{line_no}: expected {N_COLUMNS} columns, got {len(tokens)}"
                )
            row = _parse_numeric_row(tokens, path, line_no)
            unit = int(row[0])
            cycle = int(row[1])
            if unit <= 0 or cycle <= 0:
                raise ParseError(f"{path}:{line_no}: unit and cycle must be positive")
            rows_by_unit.setdefault(unit, []).append((cycle, row[2:]))

    trajectories: list[EngineTrajectory] = []
    for unit in sorted(rows_by_unit):
        entries = sorted(rows_by_unit[unit], key=lambda e: e[0])
        cycles = np.array([c for c, _ in entries], dtype=np.int64)
        expected = np.arange(1, len(cycles) + 1)
        if not np.array_equal(cycles, expected):
            raise ParseError(
                f"{path}: unit {unit} has non-contiguous cycles "
                f"(got {cycles[:5].tolist()}..., expected 1..{len(cycles)})"
            )
        payload = np.array([v for _, v in entries], dtype=np.float64)
        trajectories.append(
            EngineTrajectory(
                unit_id=unit,
                cycles=cycles,
                op_settings=payload[:, :N_SETTINGS],
                sensors=payload[:, N_SETTINGS:],
            )
        )
    return trajectories


# ---------------------------------------------------------------------------
# Sensor selection and scaling
# ---------------------------------------------------------------------------


def select_sensors(traj: EngineTrajectory, sel: SensorSelection) -> EngineTrajectory:
    """Drop the flat sensors; column order among kept sensors is preserved."""
    if traj.sensors.shape[1] != N_SENSORS:
        raise ConfigError(
            f"select_sensors expects {N_SENSORS} raw channels, got {traj.sensors.shape[1]}"
        )
    cols = [i - 1 for i in sel.kept_indices]
    return EngineTrajectory(
        unit_id=traj.unit_id,
        cycles=traj.cycles,
        op_settings=traj.op_settings,
        sensors=traj.sensors[:, cols].copy(),
    )


def fit_minmax(trajs: Iterable[EngineTrajectory]) -> NormStats:
    trajs = list(trajs)
    if not trajs:
        raise ConfigError("fit_minmax needs at least one trajectory")
    stacked = np.concatenate([t.sensors for t in trajs], axis=0)
    return NormStats(minimum=stacked.min(axis=0), maximum=stacked.max(axis=0))


def apply_minmax(
    traj: EngineTrajectory, stats: NormStats, clip: bool = True
) -> EngineTrajectory:
    """(x - min) / (max - min); constant channels map to 0.0 (warned).

    Values from trajectories outside the fitting split can fall outside
    [0, 1]; they are clipped so downstream image dynamic range stays bounded.
    """
    span = stats.maximum - stats.minimum
    degenerate = span == 0.0
    if degenerate.any():
        logger.warning(
            "apply_minmax: %d constant channel(s); normalized value fixed at 0.0",
            int(degenerate.sum()),
        )
    safe_span = np.where(degenerate, 1.0, span)
    values = (traj.sensors - stats.minimum) / safe_span
    values[:, degenerate] = 0.0
    if clip:
        values = np.clip(values, 0.0, 1.0)
    return EngineTrajectory(
        unit_id=traj.unit_id,
        cycles=traj.cycles,
        op_settings=traj.op_settings,
        sensors=values,
    )


# ---------------------------------------------------------------------------
# Windowing and labels
# ---------------------------------------------------------------------------


def make_windows(
    traj: EngineTrajectory, window_len: int, cap: float = RUL_CAP
) -> list[WindowSample]:
    """All T-L+1 sliding windows with piecewise-linear RUL labels.

    The label of the window ending at cycle t is min(T - t, cap): linear
    decline to zero at failure, capped during the early stable phase.
    """
    t_total = traj.length
    if t_total < window_len:
        logger.warning(
            "unit %d: length %d < window %d, skipped", traj.unit_id, t_total, window_len
        )
        return []
    samples = []
    for end in range(window_len, t_total + 1):
        samples.append(
            WindowSample(
                unit_id=traj.unit_id,
                end_cycle=end,
                values=traj.sensors[end - window_len : end],
                rul_label=float(min(t_total - end, cap)),
            )
        )
    return samples


def make_test_window(
    traj: EngineTrajectory, window_len: int, rul_value: float, cap: float = RUL_CAP
) -> Optional[WindowSample]:
    """The single evaluation window: last L cycles, labeled from the RUL file."""
    t_total = traj.length
    if t_total < window_len:
        logger.warning(
            "test unit %d: length %d < window %d, skipped",
            traj.unit_id,
            t_total,
            window_len,
        )
        return None
    return WindowSample(
        unit_id=traj.unit_id,
        end_cycle=t_total,
        values=traj.sensors[t_total - window_len :],
        rul_label=float(min(rul_value, cap)),
    )


# ---------------------------------------------------------------------------
# Few-shot subsetting
# ---------------------------------------------------------------------------


def fewshot_subsample(units: list[int], ratio: float, seed: int) -> FewShotPlan:
    """Engine-level subset: max(1, round-half-up(ratio * n)) units.

    Selection is a pure function of (ratio, seed, unit list); kept units are
    returned in their original order so ratio 1.0 is the identity.
    Subsampling whole engines (not windows) keeps near-duplicate overlapping
    windows from straddling the kept/dropped boundary.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"few-shot ratio must be in (0, 1], got {ratio}")
    n_keep = max(1, int(np.floor(ratio * len(units) + 0.5)))
    from .numkit import SeededRng

    order = list(range(len(units)))
    SeededRng(seed).shuffle(order)
    chosen = sorted(order[:n_keep])
    return FewShotPlan(
        ratio=ratio, seed=seed, selected_units=tuple(units[i] for i in chosen)
    )


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def write_manifest(
    path: Union[str, Path],
    dataset_id: str,
    n_train_units: int,
    n_test_units: int,
    n_train_windows: int,
    n_skipped: int,
    selection: SensorSelection,
    stats: NormStats,
    window_len: int,
    cap: float,
    seed: int,
) -> None:
    """Reproducibility record for one ingested dataset."""
    manifest = {
        "dataset": dataset_id,
        "train_units": n_train_units,
        "test_units": n_test_units,
        "train_windows": n_train_windows,
        "skipped_engines": n_skipped,
        "window_len": window_len,
        "rul_cap": cap,
        "seed": seed,
        "dropped_sensors": sorted(selection.dropped_indices),
        "kept_channels": selection.kept_count,
        "channel_min": stats.minimum.tolist(),
        "channel_max": stats.maximum.tolist(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
