"""Synthetic turbofan fleets in the C-MAPSS on-disk format.

The real NASA files are not redistributable with this package, so tests and
demos run on generated fleets that keep the format contract: 26 whitespace-
separated columns, engine counts per subset matching the published table,
seven flat sensors, multi-condition subsets with per-condition offsets, and
monotone degradation trends so remaining life is actually learnable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .cmapss import DATASET_META, DEFAULT_DROPPED_SENSORS, N_SENSORS
from .numkit import SeededRng

# Baseline level and degradation swing per sensor, loosely shaped after the
# real fleet (temperatures ~500-1600, pressures ~10-50, speeds ~2000-9000).
_SENSOR_BASE = np.array(
    [518.67, 642.0, 1585.0, 1400.0, 14.62, 21.6, 554.0, 2388.0, 9050.0, 1.3,
     47.5, 522.0, 2388.0, 8130.0, 8.44, 0.03, 392.0, 2388.0, 100.0, 38.9, 23.3]
)
_SENSOR_SWING = np.array(
    [0.0, 8.0, 30.0, 25.0, 0.0, 0.0, -6.0, 12.0, 120.0, 0.0,
     1.2, -5.0, 14.0, 110.0, 0.35, 0.0, 9.0, 0.0, 0.0, -1.5, -0.9]
)
_SENSOR_NOISE = np.array(
    [0.0, 0.25, 1.5, 2.0, 0.0, 0.0, 0.4, 0.06, 6.0, 0.0,
     0.12, 0.3, 0.07, 8.0, 0.03, 0.0, 1.0, 0.0, 0.0, 0.12, 0.07]
)

# (altitude-ish, mach-ish, throttle) triplets for up to six regimes, plus a
# per-condition sensor offset scale so multi-condition subsets shift levels.
_CONDITIONS = [
    (0.0010, 0.25, 100.0),
    (10.002, 0.25, 100.0),
    (20.003, 0.70, 100.0),
    (25.004, 0.62, 60.0),
    (35.005, 0.84, 100.0),
    (42.004, 0.84, 100.0),
]
_CONDITION_SHIFT = [0.0, 0.8, -1.1, 1.6, -0.5, 2.3]


@dataclass(frozen=True)
class FleetSpec:
    dataset_id: str
    n_train: int
    n_test: int
    n_conditions: int
    n_fault_modes: int
    min_life: int = 130
    max_life: int = 250


def spec_for(dataset_id: str, life_range: tuple[int, int] | None = None) -> FleetSpec:
    meta = DATASET_META[dataset_id]
    lo, hi = life_range if life_range else (130, 250)
    return FleetSpec(
        dataset_id=meta.dataset_id,
        n_train=meta.train_units,
        n_test=meta.test_units,
        n_conditions=meta.n_conditions,
        n_fault_modes=meta.n_fault_modes,
        min_life=lo,
        max_life=hi,
    )


def _engine_trajectory(
    rng: SeededRng, spec: FleetSpec, total_life: int
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (op_settings (T,3), sensors (T,21)) for a full run to failure."""
    gamma = 1.3 + rng.uniform() * 1.2
    fault_mode = rng.randint(spec.n_fault_modes)
    # Mode 1 degrades the pressure-family sensors faster than the thermal ones.
    mode_scale = np.ones(N_SENSORS)
    if fault_mode == 1:
        mode_scale[[4, 5, 6, 10, 11, 14]] = 1.6
        mode_scale[[1, 2, 3]] = 0.6
    engine_offset = np.array([rng.normal() for _ in range(N_SENSORS)]) * 0.5

    settings = np.zeros((total_life, 3))
    sensors = np.zeros((total_life, N_SENSORS))
    for t in range(total_life):
        cond = rng.randint(spec.n_conditions)
        base_setting = _CONDITIONS[cond]
        settings[t] = [
            base_setting[0] + rng.normal() * 0.0015,
            base_setting[1] + rng.normal() * 0.0004,
            base_setting[2],
        ]
        wear = ((t + 1) / total_life) ** gamma
        noise = np.array([rng.normal() for _ in range(N_SENSORS)])
        sensors[t] = (
            _SENSOR_BASE
            + engine_offset
            + _SENSOR_SWING * mode_scale * wear
            + _CONDITION_SHIFT[cond] * (_SENSOR_SWING != 0.0)
            + _SENSOR_NOISE * noise
        )
    flat = sorted(i - 1 for i in DEFAULT_DROPPED_SENSORS)
    sensors[:, flat] = _SENSOR_BASE[flat]
    return settings, sensors


def _format_rows(unit: int, settings: np.ndarray, sensors: np.ndarray) -> list[str]:
    rows = []
    for t in range(len(settings)):
        fields = [str(unit), str(t + 1)]
        fields += [f"{v:.4f}" for v in settings[t]]
        fields += [f"{v:.4f}" for v in sensors[t]]
        rows.append(" ".join(fields))
    return rows


def generate_fleet(root: Union[str, Path], spec: FleetSpec, seed: int) -> dict[str, Path]:
    """Write train_FDxxx.txt / test_FDxxx.txt / RUL_FDxxx.txt under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = SeededRng(seed).derive(f"fleet:{spec.dataset_id}")

    train_rows: list[str] = []
    for unit in range(1, spec.n_train + 1):
        life = spec.min_life + rng.randint(spec.max_life - spec.min_life + 1)
        settings, sensors = _engine_trajectory(rng, spec, life)
        train_rows += _format_rows(unit, settings, sensors)

    test_rows: list[str] = []
    rul_rows: list[str] = []
    for unit in range(1, spec.n_test + 1):
        life = spec.min_life + rng.randint(spec.max_life - spec.min_life + 1)
        settings, sensors = _engine_trajectory(rng, spec, life)
        # Cut before failure; keep at least ~half the life observed.
        earliest = max(2, life // 2)
        cut = earliest + rng.randint(life - 5 - earliest + 1)
        test_rows += _format_rows(unit, settings[:cut], sensors[:cut])
        rul_rows.append(str(life - cut))

    paths = {
        "train": root / f"train_{spec.dataset_id}.txt",
        "test": root / f"test_{spec.dataset_id}.txt",
        "rul": root / f"RUL_{spec.dataset_id}.txt",
    }
    paths["train"].write_text("\n".join(train_rows) + "\n")
    paths["test"].write_text("\n".join(test_rows) + "\n")
    paths["rul"].write_text("\n".join(rul_rows) + "\n")
    return paths


def generate_standard(root: Union[str, Path], seed: int = 2024) -> None:
    """All four subsets with the published engine counts."""
    for dataset_id in DATASET_META:
        generate_fleet(root, spec_for(dataset_id), seed)


def generate_micro(
    root: Union[str, Path],
    dataset_id: str = "FD001",
    n_train: int = 10,
    n_test: int = 10,
    seed: int = 2024,
    life_range: tuple[int, int] = (70, 110),
) -> dict[str, Path]:
    """Small fleet for smoke tests: few engines, short lives."""
    meta = DATASET_META[dataset_id]
    spec = FleetSpec(
        dataset_id=dataset_id,
        n_train=n_train,
        n_test=n_test,
        n_conditions=meta.n_conditions,
        n_fault_modes=meta.n_fault_modes,
        min_life=life_range[0],
        max_life=life_range[1],
    )
    return generate_fleet(root, spec, seed)
