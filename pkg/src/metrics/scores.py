"""Accuracy and coverage scores.

Every score returns None when it is undefined (no valid points, zero target
variance, ...) instead of propagating NaN. Empirical quantiles interpolate
linearly between order statistics; PICP_c and MPIW_c use the central
c-interval [q_{(1−c)/2}, q_{(1+c)/2}].
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.stats import norm

from src.common.errors import ContractError, DimensionError, DomainError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

COVERAGE_LEVELS = (0.75, 0.90)


@dataclass(frozen=True)
class IntervalSpec:
    coverage: float

    def __post_init__(self):
        if not 0 < self.coverage < 1:
            raise DomainError(f"Coverage level must lie in (0, 1), got {self.coverage}")

    @property
    def lower(self) -> float:
        return (1.0 - self.coverage) / 2.0

    @property
    def upper(self) -> float:
        return (1.0 + self.coverage) / 2.0

    @property
    def label(self) -> str:
        return f"{round(self.coverage * 100):d}"


def _valid_mask(target: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    valid = np.isfinite(target)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != target.shape:
            raise DimensionError(f"Mask shape {mask.shape} does not match target shape {target.shape}")
        valid &= mask
    return valid


def _pairs(pred, target, mask) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"Prediction shape {pred.shape} does not match target shape {target.shape}")
    valid = _valid_mask(target, mask)
    return pred[valid], target[valid]


def rmse(pred, target, mask=None) -> Optional[float]:
    pred, target = _pairs(pred, target, mask)
    if target.size == 0:
        return None
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def r2(pred, target, mask=None) -> Optional[float]:
    pred, target = _pairs(pred, target, mask)
    if target.size < 2:
        return None
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


def weekly_median_r2(pred, target, weeks, mask=None) -> Optional[float]:
    """Median of the defined per-week R² values; an even count averages the middle two.

    `weeks` labels the leading (time) axis of pred and target.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    weeks = np.asarray(weeks)
    if weeks.shape[0] != target.shape[0]:
        raise DimensionError(f"{weeks.shape[0]} week labels for {target.shape[0]} time steps")
    scores = []
    for week in np.unique(weeks):
        rows = weeks == week
        score = r2(pred[rows], target[rows], None if mask is None else np.asarray(mask)[rows])
        if score is not None:
            scores.append(score)
    return float(np.median(scores)) if scores else None


def spatial_aggregate(per_node_scores: Iterable[Optional[float]]) -> Optional[float]:
    """Mean over nodes whose score is defined."""
    defined = [float(s) for s in per_node_scores if s is not None and np.isfinite(s)]
    return float(np.mean(defined)) if defined else None


def calendar_weeks(num_steps: int, hours_per_week: int = 168, offset: int = 0) -> np.ndarray:
    return (np.arange(num_steps) + offset) // hours_per_week


def empirical_interval(samples, spec: IntervalSpec) -> Tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 2:
        raise ContractError(f"Empirical intervals need at least two ensemble members, got {samples.shape[0]}")
    lower, upper = np.quantile(samples, [spec.lower, spec.upper], axis=0, method="linear")
    return lower, upper


def gaussian_interval(mean, variance, spec: IntervalSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Central interval of N(mean, variance)."""
    std = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    mean = np.asarray(mean, dtype=np.float64)
    return mean + std * norm.ppf(spec.lower), mean + std * norm.ppf(spec.upper)


def picp_from_bounds(lower, upper, target, mask=None) -> Optional[float]:
    valid = _valid_mask(target, mask)
    if not valid.any():
        return None
    target = np.asarray(target, dtype=np.float64)[valid]
    inside = (np.asarray(lower)[valid] <= target) & (target <= np.asarray(upper)[valid])
    return float(inside.mean())


def mpiw_from_bounds(lower, upper, mask=None) -> Optional[float]:
    width = np.asarray(upper, dtype=np.float64) - np.asarray(lower, dtype=np.float64)
    valid = np.ones(width.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not valid.any():
        return None
    return float(width[valid].mean())


def picp(samples, target, mask, spec: IntervalSpec) -> Optional[float]:
    lower, upper = empirical_interval(samples, spec)
    return picp_from_bounds(lower, upper, target, mask)


def mpiw(samples, mask, spec: IntervalSpec) -> Optional[float]:
    lower, upper = empirical_interval(samples, spec)
    return mpiw_from_bounds(lower, upper, mask)
