"""Finite seller population playing the decentralised equilibrium strategies.

Each seller runs the same feedback rule on its own auxiliary state plus the
population-level tables (mean, offset) carried by a mean-field path.  The
actual qualities couple through the empirical mean, which is computed with an
exactly rounded sum so that relabelling sellers permutes trajectories
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import seeding
from .meanfield import MeanFieldPath
from .params import MarketParams, TimeGrid
from .riccati import ScalarRiccatiTable


def exact_mean(values: np.ndarray) -> float:
    """Order-independent empirical mean (exactly rounded accumulation)."""
    return math.fsum(values) / len(values)


def column_means(matrix: np.ndarray) -> np.ndarray:
    """exact_mean of every column of a (sellers, time) array."""
    return np.array([exact_mean(col) for col in matrix.T])


def seller_feedback(xi_k: float, vartheta_k: float, zeta_k: float, m_k: float,
                    q_hat: np.ndarray, params: MarketParams):
    """Equilibrium effort rule beta/(2c) * (xi*(q - m) + vartheta*m + zeta).

    Works elementwise on any array of auxiliary states.
    """
    return (params.beta / (2.0 * params.c)) * (
        xi_k * (q_hat - m_k) + vartheta_k * m_k + zeta_k)


def default_seller_tags(root_seed: int, path_index: int, n_sellers: int) -> tuple:
    """Idiosyncratic noise tags; independent of n_sellers by construction."""
    return tuple(seeding.seed_tag(root_seed, seeding.STREAM_SELLER, path_index, i)
                 for i in range(n_sellers))


def seller_increments(tags: Sequence[tuple], grid: TimeGrid) -> np.ndarray:
    """Draw the (sellers, steps) idiosyncratic Brownian increments from tags."""
    inc = np.empty((len(tags), grid.n_steps))
    root = math.sqrt(grid.dt)
    for i, tag in enumerate(tags):
        rng = np.random.default_rng(np.random.SeedSequence(list(tag)))
        inc[i] = rng.standard_normal(grid.n_steps) * root
    return inc


@dataclass(frozen=True)
class PopulationPath:
    """Seller-major trajectories of one finite population.

    q       actual qualities, coupled through the empirical mean
    q_hat   auxiliary qualities, coupled through the mean-field tables only
    tau     realised efforts
    q_bar   empirical mean of q at every grid point (exactly rounded)
    increments  idiosyncratic Brownian increments, kept for paired reruns
    """

    grid: TimeGrid
    q: np.ndarray
    q_hat: np.ndarray
    tau: np.ndarray
    q_bar: np.ndarray
    increments: np.ndarray
    seller_tags: tuple


def simulate_population(params: MarketParams, scalars: ScalarRiccatiTable,
                        mean_field: MeanFieldPath,
                        seller_tags: Sequence[tuple],
                        increments: Optional[np.ndarray] = None) -> PopulationPath:
    """Advance n sellers under the equilibrium feedback along one common path.

    The auxiliary states q_hat see only the mean-field tables; the actual
    states q see the empirical mean.  Both use the same idiosyncratic and
    common increments, and their drift contributions beta*tau versus
    gain*y_hat are kept as two code paths and asserted equal at every step.
    """
    grid = mean_field.grid
    n = len(seller_tags)
    if n < 1:
        raise ValueError("population needs at least one seller")
    if increments is None:
        increments = seller_increments(seller_tags, grid)
    elif increments.shape != (n, grid.n_steps):
        raise ValueError("increments shape must be (sellers, steps)")

    xi, vartheta = scalars.xi, scalars.vartheta
    zeta, m_star = mean_field.zeta, mean_field.m_star
    dW0 = mean_field.noise.increments
    alpha, beta, sigma, sigma0 = params.alpha, params.beta, params.sigma, params.sigma0
    gain = params.effort_gain
    dt = grid.dt

    steps = grid.n_steps
    q = np.empty((n, steps + 1))
    q_hat = np.empty((n, steps + 1))
    tau = np.empty((n, steps + 1))
    q_bar = np.empty(steps + 1)
    q[:, 0] = params.q0
    q_hat[:, 0] = params.q0

    for k in range(steps):
        y_hat = xi[k] * (q_hat[:, k] - m_star[k]) + vartheta[k] * m_star[k] + zeta[k]
        tau[:, k] = (beta / (2.0 * params.c)) * y_hat
        q_bar[k] = exact_mean(q[:, k])
        effort_drift = beta * tau[:, k]
        # same quantity through the adjoint route; equality up to rounding
        adjoint_drift = gain * y_hat
        if not np.allclose(effort_drift, adjoint_drift, rtol=1e-12, atol=1e-13):
            raise AssertionError("effort and adjoint drift routes diverged")
        shared = sigma * increments[:, k] + sigma0 * dW0[k]
        q_hat[:, k + 1] = q_hat[:, k] + (alpha * (m_star[k] - q_hat[:, k])
                                         + adjoint_drift) * dt + shared
        q[:, k + 1] = q[:, k] + (alpha * (q_bar[k] - q[:, k])
                                 + effort_drift) * dt + shared
    y_hat = xi[steps] * (q_hat[:, steps] - m_star[steps]) \
        + vartheta[steps] * m_star[steps] + zeta[steps]
    tau[:, steps] = (beta / (2.0 * params.c)) * y_hat
    q_bar[steps] = exact_mean(q[:, steps])

    return PopulationPath(grid=grid, q=q, q_hat=q_hat, tau=tau, q_bar=q_bar,
                          increments=increments, seller_tags=tuple(seller_tags))


def mean_gap_sup_sq(pop: PopulationPath, mean_field: MeanFieldPath) -> float:
    """sup_t |empirical mean - m*|^2 along one path, the propagation-of-chaos gap."""
    return float(np.max((pop.q_bar - mean_field.m_star) ** 2))
