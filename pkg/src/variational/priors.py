import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import torch
from torch.distributions import Categorical, MixtureSameFamily, Normal

from src.common.errors import ContractError, DomainError
from src.tensor.autodiff import DTYPE

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic Gaussian prior p(w) = N(mean, std²) shared by every weight"""
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise DomainError(f"Prior std must be positive, got {self.std}")

    def distribution(self) -> Normal:
        return Normal(torch.tensor(self.mean, dtype=DTYPE), torch.tensor(self.std, dtype=DTYPE))

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        return self.distribution().log_prob(x)


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Mixture of Gaussians p(w) = Σ_k π_k N(m_k, s_k²); KL against it has no closed form"""
    weights: Tuple[float, ...] = (0.5, 0.5)
    means: Tuple[float, ...] = (0.0, 0.0)
    stds: Tuple[float, ...] = (1.0, 0.1)

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.stds)) or not self.weights:
            raise ContractError("Mixture weights, means and stds must have the same nonzero length")
        if any(s <= 0 for s in self.stds):
            raise DomainError(f"Mixture stds must be positive, got {self.stds}")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise DomainError(f"Mixture weights must be nonnegative and sum to 1, got {self.weights}")

    def distribution(self) -> MixtureSameFamily:
        return MixtureSameFamily(
            Categorical(probs=torch.tensor(self.weights, dtype=DTYPE)),
            Normal(torch.tensor(self.means, dtype=DTYPE), torch.tensor(self.stds, dtype=DTYPE)),
        )

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        return self.distribution().log_prob(x)


Prior = Union[GaussianPrior, GaussianMixturePrior]


def build_prior(
    kind: str = "gaussian",
    std: float = 1.0,
    mixture_weights: Sequence[float] = (0.5, 0.5),
    mixture_stds: Sequence[float] = (1.0, 0.1),
) -> Prior:
    if kind == "gaussian":
        return GaussianPrior(mean=0.0, std=std)
    if kind == "mixture":
        return GaussianMixturePrior(
            weights=tuple(mixture_weights),
            means=tuple(0.0 for _ in mixture_weights),
            stds=tuple(mixture_stds),
        )
    raise ContractError(f"Unknown prior kind: {kind}")
