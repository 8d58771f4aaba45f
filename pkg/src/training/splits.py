import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.common.errors import ContractError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

WEEKS_PER_YEAR = 52
HOURS_PER_WEEK = 168


@dataclass
class DatasetSplit:
    """Disjoint week indices for training, validation and the held-out test year"""
    train_weeks: np.ndarray
    validation_weeks: np.ndarray
    test_weeks: np.ndarray

    def __post_init__(self):
        sets = [set(self.train_weeks.tolist()), set(self.validation_weeks.tolist()), set(self.test_weeks.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ContractError("Train, validation and test weeks must be disjoint")

    def test_span(self, hours_per_week: int = HOURS_PER_WEEK) -> Tuple[int, int]:
        return int(self.test_weeks.min()) * hours_per_week, (int(self.test_weeks.max()) + 1) * hours_per_week


def split_weekly(
    num_weeks: int,
    test_year: int = -1,
    val_fraction: float = 0.2,
    seed: int = 0,
    weeks_per_year: int = WEEKS_PER_YEAR,
) -> DatasetSplit:
    """Hold out one contiguous year, shuffle the other weeks and cut off floor(val_fraction·n) for validation.

    Only complete weeks are split. Hours after the last complete week (48 of
    the 17520 in two years of 168-hour weeks) belong to no split and are
    never trained on, validated or scored.
    """
    if num_weeks < 2 * weeks_per_year:
        raise ContractError(
            f"Weekly splitting needs at least two years ({2 * weeks_per_year} weeks), got {num_weeks}"
        )
    if not 0 <= val_fraction < 1:
        raise ContractError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    num_years = num_weeks // weeks_per_year
    year = num_years - 1 if test_year == -1 else test_year
    if not 0 <= year < num_years:
        raise ContractError(f"Test year {test_year} is outside the {num_years} complete years available")

    test = np.arange(year * weeks_per_year, (year + 1) * weeks_per_year)
    remaining = np.setdiff1d(np.arange(num_weeks), test)
    shuffled = np.random.default_rng(seed).permutation(remaining)
    num_val = int(math.floor(val_fraction * len(remaining)))
    split = DatasetSplit(
        train_weeks=np.sort(shuffled[num_val:]),
        validation_weeks=np.sort(shuffled[:num_val]),
        test_weeks=test,
    )
    logger.info(
        f"Weekly split: {len(split.train_weeks)} train, {len(split.validation_weeks)} validation, "
        f"{len(split.test_weeks)} test weeks"
    )
    return split


def window_starts(weeks: np.ndarray, window: int, hours_per_week: int, num_steps: int) -> np.ndarray:
    """Stride-1 window starts lying entirely inside a single listed week."""
    starts = []
    for week in np.sort(np.asarray(weeks)):
        first = int(week) * hours_per_week
        last = min(first + hours_per_week, num_steps) - window
        if last >= first:
            starts.append(np.arange(first, last + 1))
    return np.concatenate(starts) if starts else np.zeros(0, dtype=int)


def steps_of_weeks(weeks: np.ndarray, hours_per_week: int, num_steps: int) -> np.ndarray:
    steps = [np.arange(w * hours_per_week, min((w + 1) * hours_per_week, num_steps)) for w in np.sort(weeks)]
    return np.concatenate(steps) if steps else np.zeros(0, dtype=int)
