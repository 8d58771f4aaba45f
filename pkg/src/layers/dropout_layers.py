import logging
import math
from typing import Optional

import torch
from torch import nn

from src.common.errors import DimensionError, DomainError, describe_shape
from src.tensor.autodiff import DTYPE, matmul
from src.tensor.noise import NoiseStream

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def mc_dropout(x: torch.Tensor, p: float, noise: NoiseStream, key: str = "dropout") -> torch.Tensor:
    """Zero each unit with probability p and rescale survivors by 1/(1−p)."""
    if not 0 <= p < 1:
        raise DomainError(f"Dropout rate must lie in [0, 1), got {p}")
    if p == 0:
        return x
    mask = noise.keep_mask(x.shape, 1.0 - p, key=key)
    return x * mask / (1.0 - p)


class DropoutDense(nn.Module):
    """Point-estimate dense layer whose inputs pass through dropout on every call"""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        dropout_rate: float = 0.1,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        if not 0 <= dropout_rate < 1:
            raise DomainError(f"Dropout rate must lie in [0, 1), got {dropout_rate}")
        bound = 1.0 / math.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.dropout_rate = dropout_rate
        self.weight = nn.Parameter(
            torch.empty(in_features, out_features, dtype=DTYPE).uniform_(-bound, bound, generator=generator)
        )
        self.bias = nn.Parameter(torch.zeros(out_features, dtype=DTYPE))

    def forward(self, x: torch.Tensor, noise: NoiseStream, active: bool = True) -> torch.Tensor:
        return mc_dropout_forward(self, x, noise, active)


def mc_dropout_forward(
    layer: DropoutDense, x: torch.Tensor, noise: NoiseStream, active: bool = True
) -> torch.Tensor:
    """Dense layer with dropout on its inputs; stays active at inference for MC dropout."""
    if x.shape[-1] != layer.in_features:
        raise DimensionError(
            f"Dropout dense layer expects {layer.in_features} input features, got {describe_shape(x.shape)}"
        )
    if active:
        x = mc_dropout(x, layer.dropout_rate, noise, key="dropout_dense")
    if x.dim() == 1:
        return x @ layer.weight + layer.bias
    return matmul(x, layer.weight) + layer.bias
