"""Realised payoff functionals and Monte Carlo aggregation.

All time integrals use the trapezoid rule on the simulation grid.  The
buyer-to-broker payment enters the broker and buyer payoffs with opposite
signs; it is computed once per path and shared so the cancellation in the
combined surplus survives at floating-point rounding level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import MarketParams
from .population import PopulationPath, column_means


def follower_payoffs(pop: PopulationPath, p_br: np.ndarray,
                     params: MarketParams) -> np.ndarray:
    """Realised payoff of every seller: integral of a*p_br*q - b/2 q^2 - c tau^2."""
    integrand = (params.a * p_br)[None, :] * pop.q \
        - 0.5 * params.b * pop.q ** 2 - params.c * pop.tau ** 2
    return np.trapezoid(integrand, dx=pop.grid.dt, axis=1)


def follower_payoff(pop: PopulationPath, p_br: np.ndarray, params: MarketParams,
                    seller: int = 0) -> float:
    """Realised payoff of one seller."""
    return float(follower_payoffs(pop, p_br, params)[seller])


def transfer_term(pop: PopulationPath, p_bu: np.ndarray,
                  params: MarketParams) -> float:
    """Buyer-to-broker payment nu * integral of p_bu * (empirical mean quality)."""
    return float(np.trapezoid(params.nu * p_bu * pop.q_bar, dx=pop.grid.dt))


def broker_core(pop: PopulationPath, p_br: np.ndarray,
                params: MarketParams) -> float:
    """Broker payoff without the incoming transfer."""
    msq = column_means(pop.q ** 2)
    integrand = -params.a * p_br * pop.q_bar - params.kappa * msq \
        - 0.5 * p_br ** 2
    return float(np.trapezoid(integrand, dx=pop.grid.dt))


def leader_core(pop: PopulationPath, p_bu: np.ndarray,
                params: MarketParams) -> float:
    """Buyer payoff without the outgoing transfer."""
    msq = column_means(pop.q ** 2)
    integrand = -0.5 * p_bu ** 2 + params.lam * pop.q_bar - params.rho * msq
    return float(np.trapezoid(integrand, dx=pop.grid.dt))


def broker_payoff(pop: PopulationPath, p_bu: np.ndarray, p_br: np.ndarray,
                  params: MarketParams) -> float:
    """Realised broker payoff: core plus the transfer received from the buyer."""
    return broker_core(pop, p_br, params) + transfer_term(pop, p_bu, params)


def leader_payoff(pop: PopulationPath, p_bu: np.ndarray,
                  params: MarketParams) -> float:
    """Realised buyer payoff: core minus the transfer paid to the broker."""
    return leader_core(pop, p_bu, params) - transfer_term(pop, p_bu, params)


def combined_surplus(pop: PopulationPath, p_bu: np.ndarray, p_br: np.ndarray,
                     params: MarketParams) -> float:
    """Broker plus buyer payoff with the transfer dropped symbolically.

    Money conservation: the transfer cancels between the two tiers, so this
    equals broker_payoff + leader_payoff up to one rounding of the shared
    transfer float.
    """
    return broker_core(pop, p_br, params) + leader_core(pop, p_bu, params)


@dataclass(frozen=True)
class MonteCarloSummary:
    """Sample mean with its standard error; raw values retained for pairing."""

    mean: float
    std_error: float
    n_samples: int
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


def aggregate(values) -> MonteCarloSummary:
    """Aggregate per-path values: pairwise-summed mean, std error = std/sqrt(n)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("aggregate expects a non-empty 1-d sample")
    n = arr.size
    mean = float(np.sum(arr) / n)  # numpy reduce is fixed-order pairwise
    if n == 1:
        se = 0.0
    else:
        se = float(np.std(arr, ddof=1) / np.sqrt(n))
    return MonteCarloSummary(mean=mean, std_error=se, n_samples=n, values=arr)
