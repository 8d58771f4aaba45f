import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch.distributions import Normal

from src.common.errors import ContractError, DimensionError, DomainError
from src.tensor.autodiff import DTYPE, as_tensor, gradient_check
from src.tensor.noise import NoiseStream
from src.variational.posterior import (
    SharpeningConfig,
    VariationalParameter,
    kl_gaussian_analytic,
    kl_loss,
    kl_monte_carlo,
    sample_weight,
    sharpen,
    sharpen_sample,
    sharpening_loss,
)
from src.variational.priors import GaussianMixturePrior, GaussianPrior, build_prior


def make_vp(mu, rho, eta=0.01):
    vp = VariationalParameter((len(mu),), fan_in=1, eta_init=eta)
    with torch.no_grad():
        vp.mu.copy_(as_tensor(mu))
        vp.rho.copy_(as_tensor(rho))
    return vp


def test_sample_weight_zero_noise_returns_mean():
    vp = make_vp([0.5], [1.7])
    assert sample_weight(vp, torch.zeros(1, dtype=DTYPE)).item() == 0.5


def test_sample_weight_unit_noise_adds_softplus_of_rho():
    vp = make_vp([0.0], [0.0])
    assert sample_weight(vp, torch.ones(1, dtype=DTYPE)).item() == pytest.approx(math.log(2), abs=1e-12)


def test_sample_weight_shape_mismatch():
    with pytest.raises(DimensionError):
        sample_weight(make_vp([0.0, 1.0], [0.0, 0.0]), torch.zeros(3, dtype=DTYPE))


def test_sample_weight_monte_carlo_moments():
    n = 1_000_000
    vp = VariationalParameter((n,), fan_in=1, mu_fill=1.0, rho_init=0.0)
    w = vp.sample(NoiseStream(seed=0)).detach()
    sigma = math.log(2)
    assert abs(w.mean().item() - 1.0) < 3 * sigma / math.sqrt(n)
    assert abs(w.std().item() - sigma) < 3 * sigma / math.sqrt(2 * n)


def test_sample_weight_gradients():
    vp = make_vp([0.2, -0.4], [-1.0, 0.5])
    eps = as_tensor([0.7, -1.3])
    sample_weight(vp, eps).sum().backward()
    assert torch.equal(vp.mu.grad, torch.ones(2, dtype=DTYPE))
    assert torch.allclose(vp.rho.grad, torch.sigmoid(vp.rho.detach()) * eps, atol=1e-12)


def test_sampling_path_passes_gradient_check():
    generator = torch.Generator().manual_seed(5)
    mu = torch.rand(4, generator=generator, dtype=DTYPE) * 4 - 2
    rho = torch.rand(4, generator=generator, dtype=DTYPE) * 4 - 2
    eta = torch.rand(4, generator=generator, dtype=DTYPE)
    eps = torch.randn(4, generator=generator, dtype=DTYPE)
    g = torch.randn(4, generator=generator, dtype=DTYPE)
    cfg = SharpeningConfig(sigma0=0.1)

    def loss(mu, rho, eta):
        w = mu + torch.log1p(torch.exp(rho)) * eps
        return (torch.tanh(sharpen(w, g, eta, cfg, eps)) ** 2).sum() + sharpening_loss(eta, g, cfg)

    assert gradient_check(loss, [mu, rho, eta]) < 1e-6


@pytest.mark.parametrize(
    "q, p, expected",
    [((0.0, 1.0), (0.0, 1.0), 0.0), ((1.0, 1.0), (0.0, 1.0), 0.5)],
)
def test_kl_gaussian_analytic_examples(q, p, expected):
    assert kl_gaussian_analytic(q[0], q[1], p[0], p[1]).item() == pytest.approx(expected, abs=1e-12)


def test_kl_gaussian_analytic_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        kl_gaussian_analytic(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        kl_gaussian_analytic(0.0, 1.0, 0.0, -1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-3, 3), st.floats(0.05, 3), st.floats(-3, 3), st.floats(0.05, 3),
)
def test_kl_gaussian_analytic_is_nonnegative(mq, sq, mp, sp):
    assert kl_gaussian_analytic(mq, sq, mp, sp).item() >= -1e-12


def test_kl_monte_carlo_matches_analytic():
    analytic = kl_gaussian_analytic(0.3, 0.8, 0.0, 1.5).item()
    estimate = kl_monte_carlo(0.3, 0.8, GaussianPrior(0.0, 1.5), 1_000_000, NoiseStream(seed=1)).item()
    assert estimate == pytest.approx(analytic, rel=0.01)


def test_kl_monte_carlo_random_pairs_match_analytic():
    generator = torch.Generator().manual_seed(2)
    for trial in range(10):
        mq, mp = (torch.rand(2, generator=generator, dtype=DTYPE) * 2 - 1).tolist()
        sq, sp = (torch.rand(2, generator=generator, dtype=DTYPE) * 1.5 + 0.5).tolist()
        analytic = kl_gaussian_analytic(mq, sq, mp, sp).item()
        estimate = kl_monte_carlo(mq, sq, GaussianPrior(mp, sp), 1_000_000, NoiseStream(seed=trial)).item()
        assert estimate == pytest.approx(analytic, rel=0.01, abs=2e-3)



def test_kl_monte_carlo_seed_average_within_two_standard_errors():
    analytic = kl_gaussian_analytic(0.5, 0.7, -0.2, 1.2).item()
    estimates = torch.tensor(
        [kl_monte_carlo(0.5, 0.7, GaussianPrior(-0.2, 1.2), 10_000, NoiseStream(seed=s)).item() for s in range(50)],
        dtype=DTYPE,
    )
    standard_error = estimates.std().item() / math.sqrt(len(estimates))
    assert abs(estimates.mean().item() - analytic) <= 2 * standard_error


def test_kl_monte_carlo_identical_distributions_near_zero():
    estimate = kl_monte_carlo(0.0, 1.0, GaussianPrior(), 100_000, NoiseStream(seed=3)).item()
    assert abs(estimate) < 0.02


def test_kl_monte_carlo_mixture_is_seed_stable():
    prior = GaussianMixturePrior(weights=(0.5, 0.5), means=(0.0, 0.0), stds=(1.0, 0.1))
    estimates = [kl_monte_carlo(0.0, 1.0, prior, 1_000_000, NoiseStream(seed=s)).item() for s in range(3)]
    centre = sum(estimates) / len(estimates)
    assert all(abs(e - centre) <= 0.02 * abs(centre) for e in estimates)


def test_kl_monte_carlo_finite_when_prior_density_vanishes():
    estimate = kl_monte_carlo(0.0, 1.0, GaussianPrior(500.0, 0.01), 10, NoiseStream(seed=0))
    assert torch.isfinite(estimate)


def test_kl_monte_carlo_needs_samples():
    with pytest.raises(ContractError):
        kl_monte_carlo(0.0, 1.0, GaussianPrior(), 0, NoiseStream(seed=0))


def test_kl_loss_scaling_and_additivity():
    sigma_one_rho = math.log(math.e - 1)
    single = make_vp([1.0], [sigma_one_rho])
    assert kl_loss([single], GaussianPrior(), 0.0).item() == 0.0
    assert kl_loss([single], GaussianPrior(), 0.001).item() == pytest.approx(0.0005, abs=1e-12)
    many = make_vp([1.0] * 4, [sigma_one_rho] * 4)
    assert kl_loss([many], GaussianPrior(), 0.001).item() == pytest.approx(4 * 0.0005, abs=1e-12)


def test_kl_loss_mixture_needs_noise():
    prior = build_prior("mixture")
    with pytest.raises(ContractError):
        kl_loss([make_vp([0.0], [0.0])], prior, 0.001)
    assert kl_loss([make_vp([0.0], [0.0])], prior, 0.001, noise=NoiseStream(seed=0)).item() != 0.0


@pytest.mark.parametrize(
    "w, eta, g, eps, sigma0, expected",
    [(0.7, 0.0, 3.0, 0.0, 0.02, 0.7), (1.0, 0.1, 2.0, 0.0, 0.02, 0.8), (0.0, 0.0, 0.0, 1.0, 0.02, 0.02)],
)
def test_sharpen_examples(w, eta, g, eps, sigma0, expected):
    out = sharpen(as_tensor([w]), as_tensor([g]), as_tensor([eta]), SharpeningConfig(sigma0), as_tensor([eps]))
    assert out.item() == pytest.approx(expected, abs=1e-12)


def test_sharpen_contracts():
    cfg = SharpeningConfig()
    w = as_tensor([1.0])
    assert sharpen(w, as_tensor([5.0]), None, SharpeningConfig(enabled=False), as_tensor([1.0])) is w
    with pytest.raises(ContractError):
        sharpen(w, as_tensor([1.0]), None, cfg, as_tensor([0.0]))
    with pytest.raises(DimensionError):
        sharpen(w, as_tensor([1.0, 2.0]), as_tensor([0.1]), cfg, as_tensor([0.0]))
    with pytest.raises(DomainError):
        SharpeningConfig(sigma0=0.0)


def test_sharpening_loss_examples():
    assert sharpening_loss(as_tensor([0.0]), as_tensor([5.0]), SharpeningConfig(0.1)).item() == 0.0
    assert sharpening_loss(as_tensor([0.1]), as_tensor([2.0]), SharpeningConfig(0.1)).item() == pytest.approx(2.0)
    base = sharpening_loss(as_tensor([0.3]), as_tensor([1.5]), SharpeningConfig(0.1)).item()
    doubled = sharpening_loss(as_tensor([0.3]), as_tensor([1.5]), SharpeningConfig(0.2)).item()
    assert doubled == pytest.approx(base / 4)


def test_sharpening_loss_matches_monte_carlo_kl():
    generator = torch.Generator().manual_seed(9)
    for trial in range(3):
        shift = (torch.rand(1, generator=generator, dtype=DTYPE) * 0.2).item()
        sigma0 = (torch.rand(1, generator=generator, dtype=DTYPE) * 0.09 + 0.01).item()
        closed = sharpening_loss(as_tensor([shift]), as_tensor([1.0]), SharpeningConfig(sigma0)).item()
        estimate = kl_monte_carlo(-shift, sigma0, Normal(torch.tensor(0.0, dtype=DTYPE), torch.tensor(sigma0, dtype=DTYPE)),
                                  1_000_000, NoiseStream(seed=trial)).item()
        assert estimate == pytest.approx(closed, rel=0.01, abs=1e-3)


def test_sharpen_sample_draws_one_refinement_per_parameter():
    vp = make_vp([0.1, 0.2], [-3.0, -3.0])
    vp.name = "w"
    noise = NoiseStream(seed=0)
    sample = {vp: vp.sample(noise)}
    refined, loss = sharpen_sample(sample, {vp: as_tensor([1.0, -1.0])}, SharpeningConfig(), noise)
    assert noise.draws == {"w": 1, "w:sharpen": 1}
    assert loss.item() == pytest.approx(2 * 0.01**2 / (2 * 0.02**2))
    assert not torch.equal(refined[vp], sample[vp])


def test_mixture_prior_validation():
    with pytest.raises(DomainError):
        GaussianMixturePrior(weights=(0.7, 0.7), means=(0.0, 0.0), stds=(1.0, 0.1))
    with pytest.raises(ContractError):
        GaussianMixturePrior(weights=(1.0,), means=(0.0, 0.0), stds=(1.0, 0.1))
    with pytest.raises(DomainError):
        GaussianPrior(std=0.0)
