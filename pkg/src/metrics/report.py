import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.graph.spatial_graph import coerce_numeric, read_table
from src.metrics.scores import (
    COVERAGE_LEVELS,
    IntervalSpec,
    empirical_interval,
    gaussian_interval,
    mpiw_from_bounds,
    picp_from_bounds,
    r2,
    rmse,
    spatial_aggregate,
    weekly_median_r2,
)
from src.models.ensemble import PredictiveEnsemble, compbnn_total_variance

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"
Bounds = Dict[str, Tuple[np.ndarray, np.ndarray]]


@dataclass
class PointForecast:
    """Central prediction [T, N] with interval bounds per coverage label (None when undefined)"""
    center: np.ndarray
    bounds: Optional[Bounds]


def summarize_ensemble(
    ensemble: PredictiveEnsemble,
    levels: Sequence[float] = COVERAGE_LEVELS,
    squared_aleatoric: bool = False,
) -> PointForecast:
    """Median and empirical intervals, or Gaussian ones when the ensemble carries log-variances."""
    specs = [IntervalSpec(c) for c in levels]
    if ensemble.log_variances is not None:
        center = ensemble.mean()
        if ensemble.num_members < 2:
            return PointForecast(center, None)
        variance = compbnn_total_variance(ensemble, squared_aleatoric)
        return PointForecast(center, {s.label: gaussian_interval(center, variance, s) for s in specs})
    center = ensemble.median()
    if ensemble.num_members < 2:
        logger.warning("Single-member ensemble: coverage metrics are undefined")
        return PointForecast(center, None)
    return PointForecast(center, {s.label: empirical_interval(ensemble.samples, s) for s in specs})


@dataclass
class MetricReport:
    rmse: Optional[float]
    r2: Optional[float]
    r2_weekly_median: Optional[float]
    r2_spatial_mean: Optional[float]
    rmse_spatial_mean: Optional[float]
    picp: Dict[str, Optional[float]]
    mpiw: Dict[str, Optional[float]]
    per_node: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rmse": self.rmse,
            "r2": self.r2,
            "r2_weekly_median": self.r2_weekly_median,
            "r2_spatial_mean": self.r2_spatial_mean,
            "rmse_spatial_mean": self.rmse_spatial_mean,
            "picp": self.picp,
            "mpiw": self.mpiw,
            "metadata": self.metadata,
        }

    def save(self, directory: Path) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"report": directory / "report.json", "per_node": directory / "per_node.csv"}
        with open(paths["report"], "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        self.per_node.to_csv(paths["per_node"], index=False, float_format=FLOAT_FORMAT, na_rep="")
        logger.info(f"Wrote metric report to {paths['report']}")
        return paths


def evaluate_forecast(
    forecast: PointForecast,
    target: np.ndarray,
    mask: np.ndarray,
    weeks: np.ndarray,
    node_ids: Sequence[str],
    coords: np.ndarray,
    levels: Sequence[float] = COVERAGE_LEVELS,
    metadata: Optional[Dict[str, Any]] = None,
) -> MetricReport:
    """Pooled, weekly and per-node scores of a forecast over targets [T, N]."""
    center = forecast.center
    labels = [IntervalSpec(c).label for c in levels]
    rows = []
    for n, node in enumerate(node_ids):
        row = {
            "node": node,
            "x": float(coords[n, 0]),
            "y": float(coords[n, 1]),
            "n_valid": int((mask[:, n] & np.isfinite(target[:, n])).sum()),
            "rmse": rmse(center[:, n], target[:, n], mask[:, n]),
            "r2": r2(center[:, n], target[:, n], mask[:, n]),
        }
        for label in labels:
            if forecast.bounds is None:
                row[f"picp_{label}"] = row[f"mpiw_{label}"] = None
                continue
            lower, upper = forecast.bounds[label]
            row[f"picp_{label}"] = picp_from_bounds(lower[:, n], upper[:, n], target[:, n], mask[:, n])
            row[f"mpiw_{label}"] = mpiw_from_bounds(lower[:, n], upper[:, n], mask[:, n] & np.isfinite(target[:, n]))
        rows.append(row)
    per_node = pd.DataFrame(rows)

    picp, mpiw = {}, {}
    valid = mask & np.isfinite(target)
    for label in labels:
        if forecast.bounds is None:
            picp[label] = mpiw[label] = None
            continue
        lower, upper = forecast.bounds[label]
        picp[label] = picp_from_bounds(lower, upper, target, mask)
        mpiw[label] = mpiw_from_bounds(lower, upper, valid)

    report = MetricReport(
        rmse=rmse(center, target, mask),
        r2=r2(center, target, mask),
        r2_weekly_median=weekly_median_r2(center, target, weeks, mask),
        r2_spatial_mean=spatial_aggregate(per_node["r2"]),
        rmse_spatial_mean=spatial_aggregate(per_node["rmse"]),
        picp=picp,
        mpiw=mpiw,
        per_node=per_node,
        metadata=metadata or {},
    )
    logger.info(
        f"RMSE {report.rmse}, R2 {report.r2}, spatial R2 {report.r2_spatial_mean}, PICP {report.picp}"
    )
    return report


def load_per_node(path: Path) -> pd.DataFrame:
    """Per-node metric table; malformed rows raise DataError naming the line."""
    frame = read_table(path, ["node", "x", "y"], numeric=["x", "y"])
    return coerce_numeric(frame, [c for c in frame.columns if c not in ("node", "x", "y")], path)
