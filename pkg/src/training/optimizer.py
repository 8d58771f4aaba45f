import logging
from typing import Iterable, List, Sequence

import torch

from src.common.errors import DimensionError, describe_shape

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def make_adam(params: Iterable[torch.nn.Parameter], lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(list(params), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(
    params: Sequence[torch.nn.Parameter],
    grads: Sequence[torch.Tensor],
    state: torch.optim.Adam,
    lr: float,
) -> bool:
    """Apply one bias-corrected Adam update; returns False (and changes nothing) on a NaN gradient."""
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(
                f"Gradient {describe_shape(g.shape)} does not match parameter {describe_shape(p.shape)}"
            )
    if any(not bool(torch.all(torch.isfinite(g))) for g in grads):
        logger.warning("Non-finite gradient encountered; optimizer step aborted")
        return False
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    for group in state.param_groups:
        group["lr"] = lr
    state.step()
    return True


def collect_grads(params: Sequence[torch.nn.Parameter]) -> List[torch.Tensor]:
    return [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
