"""Gaussian weight posteriors, KL terms and posterior sharpening.

Every weight w has a posterior N(μ, σ²) with σ = log(exp(ρ) + 1), sampled as
w = μ + σ ∘ ε. Sharpening refines a sample with one gradient step,
w′ = w − η ∘ g_w + σ₀ ∘ ε′, where g_w = −∇_w log p(y | w, x).
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn
from torch.distributions import Normal, kl_divergence

from src.common.errors import ContractError, DimensionError, DomainError, describe_shape
from src.tensor.autodiff import DTYPE, softplus
from src.tensor.noise import NoiseStream
from src.variational.priors import GaussianPrior, Prior

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

RHO_INIT = -3.0
ETA_INIT = 0.01
SIGMA0_DEFAULT = 0.02
MC_KL_SAMPLES = 5

Number = Union[float, torch.Tensor]


@dataclass(frozen=True)
class SharpeningConfig:
    sigma0: float = SIGMA0_DEFAULT
    enabled: bool = True

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise DomainError(f"sigma0 must be positive, got {self.sigma0}")


class VariationalParameter(nn.Module):
    """Posterior (μ, ρ) of one weight tensor plus the optional sharpening rate η"""

    def __init__(
        self,
        shape: Sequence[int],
        fan_in: int,
        generator: Optional[torch.Generator] = None,
        rho_init: float = RHO_INIT,
        eta_init: Optional[float] = ETA_INIT,
        mu_fill: Optional[float] = None,
    ):
        super().__init__()
        shape = tuple(int(s) for s in shape)
        if mu_fill is None:
            bound = 1.0 / math.sqrt(max(1, fan_in))
            mu = torch.empty(shape, dtype=DTYPE).uniform_(-bound, bound, generator=generator)
        else:
            mu = torch.full(shape, float(mu_fill), dtype=DTYPE)
        self.mu = nn.Parameter(mu)
        self.rho = nn.Parameter(torch.full(shape, float(rho_init), dtype=DTYPE))
        if eta_init is None:
            self.eta = None
        else:
            self.eta = nn.Parameter(torch.full(shape, float(eta_init), dtype=DTYPE))
        self.name = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.mu.shape)

    @property
    def sigma(self) -> torch.Tensor:
        return softplus(self.rho)

    def sample(self, noise: NoiseStream) -> torch.Tensor:
        eps = noise.standard_normal(self.shape, key=self.name)
        return sample_weight(self, eps)

    def extra_repr(self) -> str:
        return f"shape={describe_shape(self.shape)}, sharpening={'on' if self.eta is not None else 'off'}"


WeightSample = Dict[VariationalParameter, torch.Tensor]


def name_parameters(module: nn.Module) -> List[VariationalParameter]:
    """Label every VariationalParameter below `module` with its dotted path."""
    found = []
    for name, child in module.named_modules():
        if isinstance(child, VariationalParameter):
            child.name = name
            found.append(child)
    return found


def sample_weight(vp: VariationalParameter, eps: torch.Tensor) -> torch.Tensor:
    if tuple(eps.shape) != vp.shape:
        raise DimensionError(
            f"Noise of shape {describe_shape(eps.shape)} does not match parameter {describe_shape(vp.shape)}"
        )
    return vp.mu + softplus(vp.rho) * eps


def _positive(value: Number, label: str) -> torch.Tensor:
    tensor = torch.as_tensor(value, dtype=DTYPE)
    if not bool(torch.all(tensor > 0)):
        raise DomainError(f"{label} must be positive")
    return tensor


def kl_gaussian_analytic(mu_q: Number, sigma_q: Number, mu_p: Number, sigma_p: Number) -> torch.Tensor:
    """Closed-form Σ KL(N(μq, σq²) ‖ N(μp, σp²)) over all weights"""
    sigma_q = _positive(sigma_q, "sigma_q")
    sigma_p = _positive(sigma_p, "sigma_p")
    q = Normal(torch.as_tensor(mu_q, dtype=DTYPE), sigma_q)
    p = Normal(torch.as_tensor(mu_p, dtype=DTYPE), sigma_p)
    return kl_divergence(q, p).sum()


def kl_monte_carlo(
    mu_q: Number,
    sigma_q: Number,
    prior: Union[Prior, Normal],
    num_samples: int,
    noise: NoiseStream,
) -> torch.Tensor:
    """(1/M) Σ_i [log q(x_i) − log p(x_i)], x_i ~ q, summed over weights.

    Densities are compared in log space so a vanishing prior density yields a
    large finite value rather than inf − inf.
    """
    if num_samples < 1:
        raise ContractError(f"Monte-Carlo KL needs at least one sample, got {num_samples}")
    mu_q = torch.as_tensor(mu_q, dtype=DTYPE)
    sigma_q = _positive(sigma_q, "sigma_q")
    shape = tuple(torch.broadcast_shapes(mu_q.shape, sigma_q.shape))
    eps = noise.standard_normal((num_samples,) + shape, key="kl_monte_carlo")
    x = mu_q + sigma_q * eps
    log_q = Normal(mu_q, sigma_q).log_prob(x)
    log_p = prior.log_prob(x)
    return (log_q - log_p).mean(dim=0).sum()


def kl_loss(
    params: Iterable[VariationalParameter],
    prior: Prior,
    alpha_kl: float,
    noise: Optional[NoiseStream] = None,
    num_mc_samples: int = MC_KL_SAMPLES,
    scale: float = 1.0,
) -> torch.Tensor:
    """l_KL = α_KL · scale · Σ_w KL(q(w) ‖ p(w))"""
    if alpha_kl < 0:
        raise DomainError(f"alpha_kl must be nonnegative, got {alpha_kl}")
    total = torch.zeros((), dtype=DTYPE)
    if alpha_kl == 0:
        return total
    for vp in params:
        if isinstance(prior, GaussianPrior):
            total = total + kl_gaussian_analytic(vp.mu, vp.sigma, prior.mean, prior.std)
        else:
            if noise is None:
                raise ContractError("A noise stream is required for the Monte-Carlo KL of a mixture prior")
            total = total + kl_monte_carlo(vp.mu, vp.sigma, prior, num_mc_samples, noise)
    return alpha_kl * scale * total


def sharpen(
    w: torch.Tensor,
    g_w: torch.Tensor,
    eta: Optional[torch.Tensor],
    cfg: SharpeningConfig,
    eps_prime: torch.Tensor,
) -> torch.Tensor:
    """w′ = (w − η ∘ g_w) + σ₀ ∘ ε′"""
    if not cfg.enabled:
        return w
    if eta is None:
        raise ContractError("Posterior sharpening is enabled but the parameter has no eta")
    for label, other in (("gradient", g_w), ("eta", eta), ("noise", eps_prime)):
        if tuple(other.shape) != tuple(w.shape):
            raise DimensionError(
                f"Sharpening {label} of shape {describe_shape(other.shape)} does not match weight {describe_shape(w.shape)}"
            )
    return (w - eta * g_w) + cfg.sigma0 * eps_prime


def sharpening_loss(eta: torch.Tensor, g_w: torch.Tensor, cfg: SharpeningConfig) -> torch.Tensor:
    """KL between N(w − η∘g, σ₀²) and N(w, σ₀²): Σ (η∘g)² / (2σ₀²)"""
    if not cfg.sigma0 > 0:
        raise DomainError(f"sigma0 must be positive, got {cfg.sigma0}")
    return torch.sum((eta * g_w) ** 2) / (2.0 * cfg.sigma0**2)


def sharpen_sample(
    sample: WeightSample,
    gradients: Dict[VariationalParameter, torch.Tensor],
    cfg: SharpeningConfig,
    noise: NoiseStream,
) -> Tuple[WeightSample, torch.Tensor]:
    """Second sampling step: sharpen every parameter that has a gradient.

    Returns the refined sample and the summed l_PS. Parameters without an
    entry in `gradients` keep their first-pass sample.
    """
    refined: WeightSample = dict(sample)
    loss = torch.zeros((), dtype=DTYPE)
    if not cfg.enabled:
        return refined, loss
    for vp, g_w in gradients.items():
        eps_prime = noise.standard_normal(vp.shape, key=f"{vp.name}:sharpen")
        refined[vp] = sharpen(sample[vp], g_w, vp.eta, cfg, eps_prime)
        loss = loss + sharpening_loss(vp.eta, g_w, cfg)
    return refined, loss
