"""Conditional mean-field layer: equilibrium prices and the population mean.

Given the Riccati tables, the equilibrium of the full game reduces to one
four-dimensional linear SDE driven by the common noise alone.  Its first
component is the conditional population mean m*; the two price processes are
static linear readouts of the state.  Everything here works pathwise on a
fixed time grid: tables are sampled on the grid and linearly interpolated at
Runge-Kutta half steps, and stochastic integrals use the left-point rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import seeding
from .params import MarketParams, TimeGrid, make_grid
from .riccati import (CoefficientMatrices, LayerMatrices, MatrixRiccatiTable,
                      ScalarRiccatiTable, assemble_coefficients,
                      scalar_closed_form, solve_matrix_riccati)


@dataclass(frozen=True)
class CommonNoisePath:
    """Brownian increments of the common noise on one grid.

    Reproducible bit-exactly from seed_tag; increments[k] spans
    [t_k, t_{k+1}] and has variance dt.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed_tag: tuple

    def __post_init__(self):
        self.increments.setflags(write=False)

    @classmethod
    def from_seed(cls, grid: TimeGrid, root_seed: int, path_index: int) -> "CommonNoisePath":
        tag = seeding.seed_tag(root_seed, seeding.STREAM_COMMON, path_index)
        rng = np.random.default_rng(np.random.SeedSequence(list(tag)))
        inc = rng.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
        return cls(grid=grid, increments=inc, seed_tag=tag)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "CommonNoisePath":
        """Deterministic skeleton: all increments zero."""
        return cls(grid=grid, increments=np.zeros(grid.n_steps),
                   seed_tag=("zero",))


def coarsen_noise(noise: CommonNoisePath, factor: int) -> CommonNoisePath:
    """Aggregate increments onto a grid coarser by an integer factor.

    The coarse path is the same Brownian motion observed on fewer points,
    which is what step-refinement studies need.
    """
    if noise.grid.n_steps % factor != 0:
        raise ValueError("coarsening factor must divide n_steps")
    coarse = make_grid(noise.grid.horizon, noise.grid.n_steps // factor)
    inc = noise.increments.reshape(-1, factor).sum(axis=1)
    return CommonNoisePath(grid=coarse, increments=inc,
                           seed_tag=(*noise.seed_tag, "coarsened", factor))


# --- backward table integrators ----------------------------------------------


def _backward_rk4_linear(feedback: np.ndarray, source: np.ndarray,
                         grid: TimeGrid) -> np.ndarray:
    """Backward RK4 for dy/dt = feedback[k] @ y + source[k], y(T) = 0.

    feedback and source are grid tables; half-step stage values use the
    midpoint average of adjacent rows.
    """
    n = grid.n_steps
    dim = source.shape[1]
    y = np.empty((n + 1, dim))
    y[-1] = 0.0
    for k in range(n - 1, -1, -1):
        h = -grid.dt
        m_right, m_mid, m_left = feedback[k + 1], 0.5 * (feedback[k] + feedback[k + 1]), feedback[k]
        s_right, s_mid, s_left = source[k + 1], 0.5 * (source[k] + source[k + 1]), source[k]
        yk = y[k + 1]
        k1 = m_right @ yk + s_right
        k2 = m_mid @ (yk + 0.5 * h * k1) + s_mid
        k3 = m_mid @ (yk + 0.5 * h * k2) + s_mid
        k4 = m_left @ (yk + h * k3) + s_left
        y[k] = yk + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def solve_psi(buyer: LayerMatrices, g: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Deterministic offset of the buyer-level decoupling, dpsi/dt = (g b1 + b2) psi + c.

    The source term is constant, so psi is an ordinary backward ODE solution
    with no martingale part.
    """
    feedback = g @ buyer.b1 + buyer.b2
    source = np.broadcast_to(buyer.c, (grid.n_steps + 1, buyer.dim))
    return _backward_rk4_linear(feedback, source, grid)


def solve_ell(broker: LayerMatrices, f: np.ndarray, p_bu: np.ndarray,
              grid: TimeGrid) -> np.ndarray:
    """Broker-level offset dl/dt = (f b1 + b2) l + c_template * p_bu, l(T) = 0.

    Integrated pathwise along the supplied buyer price table.  For a
    deterministic p_bu this is the exact offset; for a realised stochastic
    price it drops the martingale correction and is only used inside the
    equilibrium cross-check.
    """
    feedback = f @ broker.b1 + broker.b2
    source = p_bu[:, None] * broker.c[None, :]
    return _backward_rk4_linear(feedback, source, grid)


def solve_zeta_ode(params: MarketParams, scalars: ScalarRiccatiTable,
                   p_br: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Seller-level offset dzeta/dt = (alpha - gain*xi) zeta - a*p_br, zeta(T) = 0.

    Same pathwise caveat as `solve_ell`: exact for deterministic p_br.
    """
    feedback = (params.alpha - params.effort_gain * scalars.xi)[:, None, None]
    source = (-params.a * p_br)[:, None]
    return _backward_rk4_linear(feedback, source, grid)[:, 0]


# --- forward simulation -------------------------------------------------------


def _forward_euler_maruyama(layer: LayerMatrices, gain_table: np.ndarray,
                            offset_table: np.ndarray, noise: CommonNoisePath,
                            x0: np.ndarray) -> np.ndarray:
    """Euler-Maruyama for dX = ((a1 - b1 K) X + b1 offset) dt + d dW0."""
    grid = noise.grid
    x = np.empty((grid.n_steps + 1, layer.dim))
    x[0] = x0
    dt = grid.dt
    for k in range(grid.n_steps):
        drift = (layer.a1 - layer.b1 @ gain_table[k]) @ x[k] + layer.b1 @ offset_table[k]
        x[k + 1] = x[k] + drift * dt + layer.d * noise.increments[k]
    return x


@dataclass(frozen=True)
class MeanFieldPath:
    """One realisation of the equilibrium conditional system.

    x holds (population mean, broker shadow state, buyer shadow states); the
    first component is m*.  y is the backward block recovered through the
    decoupling, zero at the horizon by construction.
    """

    grid: TimeGrid
    noise: CommonNoisePath
    x: np.ndarray
    y: np.ndarray
    p_bu: np.ndarray
    p_br: np.ndarray
    zeta: np.ndarray
    m_star: np.ndarray


def simulate_mean_state(params: MarketParams, coeffs: CoefficientMatrices,
                        table: MatrixRiccatiTable, scalars: ScalarRiccatiTable,
                        psi: np.ndarray, noise: CommonNoisePath) -> MeanFieldPath:
    """Simulate the four-dimensional equilibrium state along one noise path.

    Prices are exact linear readouts of the state; the seller-level offset
    zeta is recovered algebraically from the first backward component, so no
    conditional expectation ever needs to be simulated.
    """
    buyer = coeffs.buyer
    x0 = np.array([params.q0, 0.0, 0.0, 0.0])
    x = _forward_euler_maruyama(buyer, table.g, psi, noise, x0)
    y = psi - np.einsum("kij,kj->ki", table.g, x)
    p_bu = -params.nu * (x[:, 0] + x[:, 3])
    p_br = -params.a * (x[:, 0] + x[:, 1])
    zeta = y[:, 0] - scalars.vartheta * x[:, 0]
    return MeanFieldPath(grid=noise.grid, noise=noise, x=x, y=y,
                         p_bu=p_bu, p_br=p_br, zeta=zeta, m_star=x[:, 0])


def m_star_closed_form(params: MarketParams, scalars: ScalarRiccatiTable,
                       zeta: np.ndarray, noise: CommonNoisePath) -> np.ndarray:
    """Variation-of-constants form of the population mean along one path.

    Lebesgue integrals use the trapezoid rule, the stochastic integral the
    left-point rule; both are first-order consistent with the Euler-Maruyama
    route through the state system.
    """
    grid = noise.grid
    gain = params.effort_gain
    dt = grid.dt
    # exponent of the integrating factor, cumulative trapezoid of vartheta
    v = scalars.vartheta
    growth = gain * np.concatenate(
        [[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)])
    damp = np.exp(-growth)
    integrand = zeta * damp
    lebesgue = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dt)])
    ito = np.concatenate([[0.0], np.cumsum(damp[:-1] * noise.increments)])
    return np.exp(growth) * (params.q0 + gain * lebesgue + params.sigma0 * ito)


@dataclass(frozen=True)
class EquilibriumTables:
    """Everything deterministic the equilibrium needs, computed once per grid."""

    grid: TimeGrid
    coeffs: CoefficientMatrices
    scalars: ScalarRiccatiTable
    matrix: MatrixRiccatiTable
    psi: np.ndarray


def equilibrium_tables(params: MarketParams, grid: TimeGrid,
                       det_floor: float = 1e-10) -> EquilibriumTables:
    """Solve all backward equations for one parameter set on one grid."""
    coeffs = assemble_coefficients(params)
    matrix = solve_matrix_riccati(params, grid, det_floor)
    scalars = scalar_closed_form(params, grid)
    psi = solve_psi(coeffs.buyer, matrix.g, grid)
    return EquilibriumTables(grid=grid, coeffs=coeffs, scalars=scalars,
                             matrix=matrix, psi=psi)


def simulate_equilibrium(params: MarketParams, tables: EquilibriumTables,
                         noise: CommonNoisePath) -> MeanFieldPath:
    """simulate_mean_state with a precomputed table bundle."""
    return simulate_mean_state(params, tables.coeffs, tables.matrix,
                               tables.scalars, tables.psi, noise)


# --- broker-layer cross-check --------------------------------------------------


@dataclass(frozen=True)
class BrokerLayerPath:
    """Two-dimensional broker-level state and offset along one noise path."""

    grid: TimeGrid
    x: np.ndarray
    ell: np.ndarray
    p_br: np.ndarray


def broker_layer_cross_check(params: MarketParams, coeffs: CoefficientMatrices,
                             f: np.ndarray, p_bu: np.ndarray,
                             noise: CommonNoisePath) -> BrokerLayerPath:
    """Re-solve the broker-level system for a given buyer price path.

    Offset by backward integration of the supplied price table, then the
    forward two-dimensional state under the same common noise.  Its state
    must agree with the first two components of the buyer-level simulation
    when fed the matching price, which is the nested-consistency check used
    by the tests.
    """
    broker = coeffs.broker
    ell = solve_ell(broker, f, p_bu, noise.grid)
    x0 = np.array([params.q0, 0.0])
    x = _forward_euler_maruyama(broker, f, ell, noise, x0)
    p_br = -params.a * (x[:, 0] + x[:, 1])
    return BrokerLayerPath(grid=noise.grid, x=x, ell=ell, p_br=p_br)


def adjoint_terminal_residual(layer: LayerMatrices, x: np.ndarray, y: np.ndarray,
                              c_path: np.ndarray, grid: TimeGrid) -> float:
    """Terminal defect of the backward block when integrated forward.

    Starting from y[0], advance dY = (a2 X + b2 Y + c) dt with forward Euler
    along the realised X; on a zero-noise path the result must return to the
    zero terminal condition up to O(dt).  Returns the max-norm at T.
    """
    yk = y[0].copy()
    for k in range(grid.n_steps):
        yk = yk + (layer.a2 @ x[k] + layer.b2 @ yk + c_path[k]) * grid.dt
    return float(np.max(np.abs(yk)))
