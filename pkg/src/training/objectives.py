"""Training objectives.

BTNN:     L = l_MSE + l_KL + l_PS
BSTNN:    L = l_MSE + l_KL   (KL over the regime's trainable groups only)
compBNN:  L = mean(0.5·exp(−s)·(y − ŷ)² + 0.5·s)
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import torch

from src.tensor.autodiff import DTYPE
from src.tensor.noise import NoiseStream
from src.variational.posterior import MC_KL_SAMPLES, VariationalParameter, kl_loss
from src.variational.priors import Prior

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LOG_VARIANCE_CLAMP = 15.0


@dataclass
class LossTerms:
    total: torch.Tensor
    mse: torch.Tensor
    kl: torch.Tensor
    ps: torch.Tensor


@dataclass
class Objective:
    """Prior and weighting shared by the variational losses"""
    prior: Prior
    alpha_kl: float
    kl_scale: float = 1.0
    mc_samples: int = MC_KL_SAMPLES

    def kl(self, params: Iterable[VariationalParameter], noise: Optional[NoiseStream] = None) -> torch.Tensor:
        return kl_loss(params, self.prior, self.alpha_kl, noise, self.mc_samples, self.kl_scale)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> Optional[torch.Tensor]:
    count = int(mask.sum())
    if count == 0:
        return None
    return torch.where(mask, values, torch.zeros_like(values)).sum() / count


def masked_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> Optional[torch.Tensor]:
    """Mean squared error over valid entries; None when nothing is valid."""
    mask = mask.bool()
    # invalid targets may hold NaN; replace them so no NaN reaches the gradient
    target = torch.where(mask, target, torch.zeros_like(target))
    return _masked_mean((pred - target) ** 2, mask)


def loss_btnn(
    pred: torch.Tensor,
    target: torch.Tensor,
    mask: torch.Tensor,
    model,
    objective: Objective,
    ps: Optional[torch.Tensor] = None,
    noise: Optional[NoiseStream] = None,
) -> Optional[LossTerms]:
    mse = masked_mse(pred, target, mask)
    if mse is None:
        logger.warning("Batch has no valid targets; skipped")
        return None
    kl = objective.kl(model.variational_parameters(), noise)
    ps = ps if ps is not None else torch.zeros((), dtype=DTYPE)
    return LossTerms(total=mse + kl + ps, mse=mse, kl=kl, ps=ps)


def loss_bstnn(
    pred: torch.Tensor,
    target: torch.Tensor,
    mask: torch.Tensor,
    model,
    objective: Objective,
    trainable_groups: Sequence[str],
    noise: Optional[NoiseStream] = None,
) -> Optional[LossTerms]:
    mse = masked_mse(pred, target, mask)
    if mse is None:
        logger.warning("Batch has no valid targets; skipped")
        return None
    groups = model.parameter_groups()
    params: List[VariationalParameter] = [vp for name in trainable_groups for vp in groups[name]]
    kl = objective.kl(params, noise)
    zero = torch.zeros((), dtype=DTYPE)
    return LossTerms(total=mse + kl, mse=mse, kl=kl, ps=zero)


def loss_compbnn(
    y: torch.Tensor, y_hat: torch.Tensor, s: torch.Tensor, mask: torch.Tensor
) -> Optional[torch.Tensor]:
    """Heteroscedastic Gaussian loss; s is clamped to [−15, 15] so exp(−s) stays finite."""
    mask = mask.bool()
    y = torch.where(mask, y, torch.zeros_like(y))
    s = torch.clamp(s, -LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP)
    per_point = 0.5 * torch.exp(-s) * (y - y_hat) ** 2 + 0.5 * s
    loss = _masked_mean(per_point, mask)
    if loss is None:
        logger.warning("Batch has no valid targets; skipped")
    return loss
