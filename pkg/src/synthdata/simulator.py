"""Synthetic lake: graph diffusion of surface temperature under seasonal,
diurnal and wind-modulated forcing, observed through a sparse mask.

Feature channels, in order:
    air_temperature   forcing temperature plus noise
    wind_speed        nonnegative AR(1) wind, speeds up relaxation to forcing
    radiation         clipped diurnal cycle scaled by season
    bulk_temperature  surface temperature low-pass filtered (τ = 72 h) and lagged
"""
import logging
import math
from dataclasses import replace
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import lfilter, lfilter_zi
from scipy.spatial.distance import cdist

from src.common.errors import ContractError, DomainError
from src.synthdata.dataset_io import FEATURE_NAMES, LakeDataset

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MIN_HOURS = 36
HOURS_PER_DAY = 24
SHORE_NEIGHBOURS = 4


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_nodes: int = Field(default=30, ge=1)
    hours: int = Field(default=17520, ge=MIN_HOURS)
    spacing: float = Field(default=1000.0, gt=0)
    aspect_ratio: float = Field(default=2.0, gt=0)
    jitter: float = Field(default=0.15, ge=0, lt=0.5)
    mean_temperature: float = 12.0
    seasonal_amplitude: float = Field(default=8.0, ge=0)
    seasonal_period: float = Field(default=8760.0, gt=0)
    diurnal_amplitude: float = Field(default=2.0, ge=0)
    spatial_gradient: float = Field(default=1.5, ge=0)
    diffusion: float = Field(default=0.1, ge=0)
    relaxation: float = Field(default=0.03, ge=0, le=1)
    wind_coupling: float = Field(default=0.5, ge=0)
    forcing_noise: float = Field(default=0.3, ge=0)
    noise_correlation: float = Field(default=0.97, ge=0, lt=1)
    feature_noise: float = Field(default=0.2, ge=0)
    bulk_time_constant: float = Field(default=72.0, ge=1)
    bulk_lag: int = Field(default=12, ge=0)
    mask_rate: float = Field(default=0.05, gt=0, le=1)
    cloud_blobs: bool = False
    cloud_rate: float = Field(default=0.1, ge=0, le=1)
    cloud_radius: float = Field(default=2000.0, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_stability(self):
        # explicit diffusion stays a convex average only while κ·max_degree ≤ 1
        if self.diffusion * SHORE_NEIGHBOURS > 1:
            raise ValueError(f"diffusion must be at most {1 / SHORE_NEIGHBOURS} on a 4-neighbour lattice")
        if self.relaxation * (1 + self.wind_coupling * 3) > 1:
            raise ValueError("relaxation·(1 + 3·wind_coupling) must not exceed 1")
        return self


def lake_layout(num_nodes: int, aspect_ratio: float, spacing: float, jitter: float, rng: np.random.Generator):
    """Irregular lattice inside an ellipse.

    Returns coordinates [N, 2], lattice neighbour adjacency [N, N] and the
    shore flag (fewer than four lattice neighbours).
    """
    if num_nodes < 1:
        raise ContractError(f"A lake needs at least one node, got {num_nodes}")
    half = int(math.ceil(math.sqrt(num_nodes * aspect_ratio))) + 1
    gx, gy = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1))
    gx, gy = gx.ravel(), gy.ravel()
    radius = np.hypot(gx / aspect_ratio, gy)
    chosen = np.lexsort((gx, gy, radius))[:num_nodes]
    chosen = chosen[np.lexsort((gx[chosen], gy[chosen]))]
    cells = np.stack([gx[chosen], gy[chosen]], axis=1)

    steps = np.abs(cells[:, None, :] - cells[None, :, :]).sum(axis=-1)
    lattice = (steps == 1).astype(np.float64)
    shore = lattice.sum(axis=1) < SHORE_NEIGHBOURS
    coords = (cells + rng.uniform(-jitter, jitter, size=cells.shape)) * spacing
    return coords, lattice, shore


def _ar1(innovations: np.ndarray, phi: float) -> np.ndarray:
    return lfilter([1.0], [1.0, -phi], innovations, axis=0)


def _low_pass(series: np.ndarray, time_constant: float, lag: int) -> np.ndarray:
    """First-order filter b_t = b_{t−1} + (u_{t−lag} − b_{t−1}) / τ started at equilibrium."""
    lag = min(lag, len(series) - 1)
    if lag:
        series = np.concatenate([np.repeat(series[:1], lag, axis=0), series[:-lag]], axis=0)
    a = 1.0 / time_constant
    zi = lfilter_zi([a], [1.0, a - 1.0])
    return lfilter([a], [1.0, a - 1.0], series, axis=0, zi=zi[:, None] * series[:1])[0]


def diffuse(u: np.ndarray, laplacian: np.ndarray, kappa: float) -> np.ndarray:
    """One explicit step u − κ·L·u; L has zero row sums so the mean is preserved."""
    return u - kappa * (laplacian @ u)


def apply_mask(
    dataset: LakeDataset,
    mask_rate: float,
    seed: int = 0,
    cloud_blobs: bool = False,
    cloud_rate: float = 0.1,
    cloud_radius: float = 2000.0,
) -> LakeDataset:
    """Keep each (t, n) target with probability `mask_rate`, optionally blanking cloud-like discs."""
    if not 0 < mask_rate <= 1:
        raise DomainError(f"mask_rate must lie in (0, 1], got {mask_rate}")
    truth = dataset.dense_targets if dataset.dense_targets is not None else dataset.targets
    rng = np.random.default_rng(seed)
    T, N = truth.shape
    mask = rng.random((T, N)) < mask_rate
    if cloud_blobs:
        distance = cdist(dataset.coords, dataset.coords)
        cloudy = rng.random(T) < cloud_rate
        centres = rng.integers(0, N, size=T)
        covered = distance[centres] < cloud_radius
        mask &= ~(cloudy[:, None] & covered)
    if dataset.dense_targets is None:
        mask &= dataset.mask
    mask &= np.isfinite(truth)
    logger.info(f"Applied observation mask: {mask.mean():.4f} of {T * N} cells valid")
    return replace(dataset, targets=np.where(mask, truth, np.nan), mask=mask)


def simulate_field(config: SyntheticConfig, rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, ...]:
    """Dense surface temperature [T, N] with the drivers that produced it."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    coords, lattice, shore = lake_layout(
        config.num_nodes, config.aspect_ratio, config.spacing, config.jitter, rng
    )
    T, N = config.hours, config.num_nodes
    t = np.arange(T, dtype=np.float64)

    season = np.sin(2 * np.pi * t / config.seasonal_period - np.pi / 2)
    day = np.sin(2 * np.pi * (t % HOURS_PER_DAY - 9) / HOURS_PER_DAY)
    span = np.ptp(coords[:, 0]) or 1.0
    gradient = (coords[:, 0] - coords[:, 0].mean()) / span * 2
    noise = _ar1(rng.standard_normal((T, N)), config.noise_correlation) * config.forcing_noise * math.sqrt(
        1 - config.noise_correlation**2
    )
    forcing = (
        config.mean_temperature
        + config.seasonal_amplitude * season[:, None]
        + config.diurnal_amplitude * day[:, None]
        + config.spatial_gradient * np.clip(gradient, -1, 1)[None, :]
        + noise
    )

    # wind lies in [0, 3] so the relaxation rate stays below one
    wind = np.clip(1.0 + _ar1(rng.standard_normal(T), 0.95) * 0.3, 0.0, 3.0)
    rate = config.relaxation * (1 + config.wind_coupling * wind)
    laplacian = np.diag(lattice.sum(axis=1)) - lattice

    field = np.empty((T, N))
    u = forcing[0].copy()
    for step in range(T):
        u = diffuse(u, laplacian, config.diffusion)
        u = u + rate[step] * (forcing[step] - u)
        field[step] = u
    return field, forcing, wind, season, day, coords, shore


def simulate(config: Optional[SyntheticConfig] = None) -> LakeDataset:
    config = config or SyntheticConfig()
    layout_seed, mask_seed = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(layout_seed)
    field, forcing, wind, season, day, coords, shore = simulate_field(config, rng)
    T, N = field.shape

    def jittered(values: np.ndarray) -> np.ndarray:
        return values + config.feature_noise * rng.standard_normal(values.shape)

    air = jittered(forcing + 0.5 * config.diurnal_amplitude * day[:, None])
    wind_speed = np.maximum(jittered(np.repeat(wind[:, None], N, axis=1) * 4.0), 0.0)
    radiation = np.maximum(jittered(np.repeat((np.clip(day, 0, None) * (1.3 + 0.5 * season))[:, None], N, axis=1)), 0.0)
    bulk = jittered(_low_pass(field, config.bulk_time_constant, config.bulk_lag))
    features = np.stack([air, wind_speed, radiation, bulk], axis=-1)

    dataset = LakeDataset(
        features=features,
        targets=field,
        mask=np.ones((T, N), dtype=bool),
        node_ids=[f"n{i:03d}" for i in range(N)],
        coords=coords,
        shore=shore,
        feature_names=FEATURE_NAMES,
        dense_targets=field,
        manifest={"generator": "synthetic-lake", "config": config.model_dump()},
    )
    mask_rng_seed = int(mask_seed.generate_state(1)[0])
    dataset = apply_mask(
        dataset, config.mask_rate, mask_rng_seed, config.cloud_blobs, config.cloud_rate, config.cloud_radius
    )
    logger.info(
        f"Simulated {T} hours over {N} nodes ({int(shore.sum())} shore); "
        f"valid fraction {dataset.mask.mean():.4f}"
    )
    return dataset
