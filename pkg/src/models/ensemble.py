import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from src.common.errors import ContractError, DimensionError
from src.models.networks import ProbabilisticModel
from src.tensor.autodiff import DTYPE
from src.tensor.noise import NoiseStream, member_seeds

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ENSEMBLE_SIZE = 11
WINDOW_CHUNK = 64


@dataclass
class PredictiveEnsemble:
    """E stochastic predictions [E, T, N] (plus log-variances for the MC-dropout model)"""
    samples: np.ndarray
    log_variances: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim < 1 or self.samples.shape[0] < 1:
            raise ContractError("An ensemble needs at least one member")
        if self.log_variances is not None:
            self.log_variances = np.asarray(self.log_variances, dtype=np.float64)
            if self.log_variances.shape != self.samples.shape:
                raise DimensionError(
                    f"Log-variances {self.log_variances.shape} do not match samples {self.samples.shape}"
                )

    @property
    def num_members(self) -> int:
        return int(self.samples.shape[0])

    def median(self) -> np.ndarray:
        return np.median(self.samples, axis=0)

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def quantile(self, q: float) -> np.ndarray:
        return np.quantile(self.samples, q, axis=0, method="linear")


def _window_plan(total: int, start: int, stop: int, window: int, horizon: int) -> List[Tuple[int, int, int]]:
    """(window_start, keep_from, keep_to) triples covering [start, stop) with stride `horizon`."""
    if total <= window:
        return [(0, start, stop)]
    plan = []
    end = start
    while end < stop:
        keep_from, end = end, min(end + horizon, stop)
        window_start = min(max(0, end - window), total - window)
        plan.append((window_start, keep_from, end))
    return plan


def rolling_predict(
    model: ProbabilisticModel,
    X: torch.Tensor,
    sample,
    noise: NoiseStream,
    window: Optional[int] = None,
    horizon: Optional[int] = None,
    span: Optional[Tuple[int, int]] = None,
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Predict steps span[0]..span[1] of X [T, N, D] with one weight sample.

    With a window, the series is cut into windows of that length advanced by
    `horizon`; each window contributes its last `horizon` outputs.
    """
    total = X.shape[0]
    start, stop = span if span is not None else (0, total)
    if window is None:
        y, s = model.predict_nodes(X, sample, noise)
        return y[start:stop], None if s is None else s[start:stop]

    horizon = horizon or window
    plan = _window_plan(total, start, stop, window, horizon)
    width = min(window, total)
    ys, ss = [], []
    for chunk in range(0, len(plan), WINDOW_CHUNK):
        part = plan[chunk:chunk + WINDOW_CHUNK]
        batch = torch.stack([X[ws:ws + width] for ws, _, _ in part])
        y, s = model.predict_nodes(batch, sample, noise)
        for k, (ws, keep_from, keep_to) in enumerate(part):
            ys.append(y[k, keep_from - ws:keep_to - ws])
            if s is not None:
                ss.append(s[k, keep_from - ws:keep_to - ws])
    return torch.cat(ys), torch.cat(ss) if ss else None


def predict_ensemble(
    model: ProbabilisticModel,
    X,
    num_members: int = ENSEMBLE_SIZE,
    seed: int = 0,
    window: Optional[int] = None,
    horizon: Optional[int] = None,
    span: Optional[Tuple[int, int]] = None,
    workers: int = 1,
) -> PredictiveEnsemble:
    """E independent stochastic passes over raw features X [T, N, D]."""
    if num_members < 1:
        raise ContractError(f"Ensemble size must be at least 1, got {num_members}")
    X = torch.as_tensor(X, dtype=DTYPE)
    seeds = member_seeds(seed, num_members)
    model.eval()

    def run_member(member_seed: int):
        noise = NoiseStream(seed=member_seed)
        with torch.no_grad():
            sample = model.sample_weights(noise)
            y, s = rolling_predict(model, X, sample, noise, window, horizon, span)
        return y.numpy(), None if s is None else s.numpy()

    logger.info(f"Running {num_members} ensemble passes with {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_member, seeds))
    else:
        results = [run_member(s) for s in seeds]

    samples = np.stack([r[0] for r in results])
    log_variances = None if results[0][1] is None else np.stack([r[1] for r in results])
    if not np.all(np.isfinite(samples)):
        logger.warning("Ensemble contains non-finite predictions")
    return PredictiveEnsemble(samples=samples, log_variances=log_variances)


def compbnn_total_variance(ensemble: PredictiveEnsemble, squared_aleatoric: bool = False) -> np.ndarray:
    """Σŷ²/E − (Σŷ/E)² plus the aleatoric mean of exp(s) (or of exp(s)² when `squared_aleatoric`)."""
    if ensemble.log_variances is None:
        raise ContractError("Total variance needs the predicted log-variances of an MC-dropout ensemble")
    if ensemble.num_members < 2:
        raise ContractError("Total variance needs at least two ensemble members")
    y = ensemble.samples
    epistemic = np.mean(y**2, axis=0) - np.mean(y, axis=0) ** 2
    variances = np.exp(ensemble.log_variances)
    aleatoric = np.mean(variances**2 if squared_aleatoric else variances, axis=0)
    return np.maximum(epistemic, 0.0) + aleatoric
