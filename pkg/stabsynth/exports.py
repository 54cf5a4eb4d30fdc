"""Run artifacts: schedule CSV, JSON summary, gain files and trajectory CSV."""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import structlog

from stabsynth.exceptions import ConfigError
from stabsynth.schemas import FORMAT_VERSION
from stabsynth.stabilize_exact import DiscountSchedule, StabilizationResult

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = "%.12g"


def _clean(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


def schedule_frame(schedule: DiscountSchedule) -> pd.DataFrame:
    """One row per outer iteration; gain entries as ``k_<row>_<col>`` (1-based)."""
    rows: List[Dict[str, Any]] = []
    for record in schedule.records:
        row: Dict[str, Any] = {
            "iter": record.iteration,
            "alpha": record.alpha,
            "delta_alpha": record.delta_alpha,
            "cost": record.cost,
            "inner_iters": record.inner_iters,
        }
        for (i, j), value in np.ndenumerate(record.gain):
            row[f"k_{i + 1}_{j + 1}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def write_schedule_csv(schedule: DiscountSchedule, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schedule_frame(schedule).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("schedule_written", path=str(path), rows=len(schedule))
    return path


def result_summary(result: StabilizationResult, name: str, mode: str) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "name": name,
        "mode": mode,
        "alpha0": result.alpha0,
        "iterations": len(result.schedule),
        "gain": result.gain.tolist(),
        "stabilizing": result.verified,
        "riccati_residual": _clean(result.riccati_residual),
        "final_value": result.final_value.tolist(),
        "optimal_gain": result.optimal_gain.tolist() if result.optimal_gain is not None else None,
        "optimal_cost": _clean(result.optimal_cost),
        "alpha_tilde": _clean(result.alpha_tilde),
        "iteration_bound": result.iteration_bound,
        "noise_floor": _clean(result.noise_floor),
    }


def write_summary_json(summary: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return path


def write_gain(gain: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"gain": np.asarray(gain).tolist()}) + "\n", encoding="utf-8")
    return path


def load_gain(path: Union[str, Path]) -> np.ndarray:
    """Read a gain from ``{"gain": [[...]]}``, a bare nested list, or a ``result.json``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read gain file {path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("gain")
    try:
        gain = np.array(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"gain file {path} does not hold a numeric matrix") from exc
    if gain.ndim == 1:
        gain = gain[None, :]
    if gain.ndim != 2 or gain.size == 0:
        raise ConfigError(f"gain file {path} does not hold a matrix")
    return gain


def write_trajectory_csv(times: np.ndarray, means: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(means, columns=[f"mean_x{i + 1}" for i in range(means.shape[1])])
    frame.insert(0, "t", times)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
