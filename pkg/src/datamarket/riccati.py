"""Backward Riccati layer for the three market tiers.

Scalar equations (seller aggregation) admit closed forms; the 2x2 broker and
4x4 buyer Riccati equations are evaluated through a Hamiltonian block formula
built on the matrix exponential.  A classic backward RK4 integrator is kept
alongside as an independent oracle for both routes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import MarketParams, TimeGrid

# Any trajectory beyond this magnitude is treated as a finite-time blow-up.
_BLOWUP_LIMIT = 1e10


class SolverError(Exception):
    """Raised on Riccati blow-up or loss of solvability (determinant floor)."""


def delta_roots(params: MarketParams) -> tuple[float, float, float, float]:
    """Characteristic roots (delta1_plus, delta1_minus, delta2_plus, delta2_minus).

    delta1 pair: roots of r^2 + 2*alpha*r - b*beta^2/(2c) = 0, driving the
    relative-quality gain xi.  delta2 pair: same with alpha halved inside the
    square root, driving the population-mean gain vartheta.
    """
    alpha = params.alpha
    gain = params.effort_gain
    disc1 = alpha * alpha + params.b * gain
    disc2 = 0.25 * alpha * alpha + params.b * gain
    if disc1 <= 0.0 or disc2 <= 0.0:
        raise ValueError("characteristic discriminant must be positive")
    s1 = np.sqrt(disc1)
    s2 = np.sqrt(disc2)
    return (-alpha + s1, -alpha - s1, -0.5 * alpha + s2, -0.5 * alpha - s2)


@dataclass(frozen=True)
class ScalarRiccatiTable:
    """Grid-sampled scalar gains.

    xi       relative-quality gain, xi <= 0 when b > 0
    vartheta population-mean gain
    phi      sign-mirrored companion of xi; phi + xi = 0 identically
    """

    grid: TimeGrid
    xi: np.ndarray
    vartheta: np.ndarray
    phi: np.ndarray


def scalar_riccati_oracle(a2_coeff: float, a1_coeff: float, a0_coeff: float,
                          terminal: float, grid: TimeGrid) -> np.ndarray:
    """Backward classic RK4 for dy/dt = a2*y^2 + a1*y + a0, y(T) = terminal.

    Fixed step, deterministic; used as the reference route for every scalar
    closed form.  Raises SolverError on finite-time blow-up.
    """

    def rhs(y):
        return (a2_coeff * y + a1_coeff) * y + a0_coeff

    t = grid.t
    y = np.empty(grid.n_steps + 1)
    y[-1] = terminal
    for k in range(grid.n_steps - 1, -1, -1):
        h = t[k] - t[k + 1]  # negative step: integrate toward t = 0
        yk = y[k + 1]
        k1 = rhs(yk)
        k2 = rhs(yk + 0.5 * h * k1)
        k3 = rhs(yk + 0.5 * h * k2)
        k4 = rhs(yk + h * k3)
        y[k] = yk + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(y[k]) or abs(y[k]) > _BLOWUP_LIMIT:
            raise SolverError(
                f"scalar Riccati blow-up between t={t[k]:.6g} and t={t[k + 1]:.6g}")
    return y


def _closed_form(b_coeff: float, d_plus: float, d_minus: float,
                 time_to_go: np.ndarray) -> np.ndarray:
    # y(t) = b (e^{(d+ - d-) s} - 1) / (d- e^{(d+ - d-) s} - d+),  s = T - t.
    e = np.exp((d_plus - d_minus) * time_to_go)
    denom = d_minus * e - d_plus
    bad = np.abs(denom) < 1e-14
    if np.any(bad):
        t_bad = time_to_go[bad][0]
        raise SolverError(f"scalar closed form degenerate at time-to-go {t_bad:.6g}")
    return b_coeff * (e - 1.0) / denom


def scalar_closed_form(params: MarketParams, grid: TimeGrid) -> ScalarRiccatiTable:
    """Closed-form xi and vartheta plus RK4-integrated phi on the grid."""
    d1p, d1m, d2p, d2m = delta_roots(params)
    s = grid.horizon - grid.t
    xi = _closed_form(params.b, d1p, d1m, s)
    vartheta = _closed_form(params.b, d2p, d2m, s)
    # phi solves the sign-mirrored equation dphi/dt = gain*phi^2 + 2*alpha*phi - b.
    phi = scalar_riccati_oracle(params.effort_gain, 2.0 * params.alpha,
                                -params.b, 0.0, grid)
    return ScalarRiccatiTable(grid=grid, xi=xi, vartheta=vartheta, phi=phi)


# --- coefficient matrices ----------------------------------------------------


@dataclass(frozen=True)
class LayerMatrices:
    """One tier of the conditional forward-backward system.

    The forward state satisfies dX = (a1 X + b1 Y) dt + d dW0, the backward
    one dY = (a2 X + b2 Y + c(t)) dt + martingale.  `c` is a template: for the
    broker it is scaled by the buyer price at each time, for the buyer it is
    constant.
    """

    a1: np.ndarray
    b1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def dim(self) -> int:
        return self.a1.shape[0]

    def hamiltonian(self) -> np.ndarray:
        """Block matrix [[a1, -b1], [-a2, b2]] whose flow solves the Riccati equation."""
        top = np.hstack([self.a1, -self.b1])
        bottom = np.hstack([-self.a2, self.b2])
        return np.vstack([top, bottom])


@dataclass(frozen=True)
class CoefficientMatrices:
    """Broker (2-dim) and buyer (4-dim) layer matrices for one parameter set."""

    broker: LayerMatrices
    buyer: LayerMatrices


def assemble_coefficients(params: MarketParams) -> CoefficientMatrices:
    """Build both conditional-system coefficient sets from the model constants."""
    alpha, a, b = params.alpha, params.a, params.b
    kappa, rho, nu = params.kappa, params.rho, params.nu
    gain = params.effort_gain
    a_sq = a * a
    nu_sq = nu * nu

    broker = LayerMatrices(
        a1=np.array([[0.0, 0.0], [0.0, -alpha]]),
        b1=np.array([[gain, 0.0], [0.0, -gain]]),
        a2=np.array([[b + a_sq, a_sq],
                     [2.0 * kappa - a_sq, -b - a_sq]]),
        b2=np.array([[alpha, 0.0], [0.0, 0.0]]),
        # c(t) = c_template * p_bu(t)
        c=np.array([0.0, -nu]),
        d=np.array([params.sigma0, 0.0]),
    )
    buyer = LayerMatrices(
        a1=np.diag([0.0, -alpha, -alpha, 0.0]),
        b1=np.diag([gain, -gain, -gain, gain]),
        a2=np.array([
            [b + a_sq, a_sq, 0.0, 0.0],
            [2.0 * kappa + nu_sq - a_sq, -b - a_sq, 0.0, nu_sq],
            [2.0 * rho - nu_sq, 0.0, -b - a_sq, -2.0 * kappa + a_sq - nu_sq],
            [0.0, 0.0, -a_sq, b + a_sq],
        ]),
        b2=np.diag([alpha, 0.0, 0.0, alpha]),
        c=np.array([0.0, 0.0, -params.lam, 0.0]),
        d=np.array([params.sigma0, 0.0, 0.0, 0.0]),
    )
    return CoefficientMatrices(broker=broker, buyer=buyer)


# --- matrix exponential ------------------------------------------------------


def matrix_exponential(m: np.ndarray, s: float = 1.0) -> np.ndarray:
    """expm(m*s) by scaling-and-squaring with a Taylor core.

    Sized for the Hamiltonian blocks of this model: m must be 4x4 or 8x8.
    """
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (4, 8):
        raise ValueError(f"matrix_exponential expects a 4x4 or 8x8 matrix, got {m.shape}")
    a = np.asarray(m, dtype=float) * s
    norm = np.linalg.norm(a, 1)
    if not np.isfinite(norm):
        raise ValueError("matrix_exponential requires finite entries")
    # Scale so the 1-norm is at most 1/4; Taylor order 16 then leaves a
    # truncation error far below double precision.
    n_squarings = max(0, int(np.ceil(np.log2(norm / 0.25)))) if norm > 0.25 else 0
    a_scaled = a / (2.0 ** n_squarings)
    eye = np.eye(m.shape[0])
    result = eye.copy()
    for order in range(16, 0, -1):
        result = eye + (a_scaled @ result) / order
    for _ in range(n_squarings):
        result = result @ result
    return result


# --- matrix Riccati ----------------------------------------------------------


@dataclass(frozen=True)
class MatrixRiccatiTable:
    """Grid-sampled broker gain f (2x2) and buyer gain g (4x4).

    det_path_f / det_path_g track the determinant of the denominator block of
    the Hamiltonian flow; positivity along the whole grid certifies the block
    formula.
    """

    grid: TimeGrid
    f: np.ndarray
    g: np.ndarray
    det_path_f: np.ndarray
    det_path_g: np.ndarray


def _block_formula(layer: LayerMatrices, grid: TimeGrid,
                   det_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the Riccati gain pointwise from the Hamiltonian flow.

    With E = expm(H*(t-T)) split into d x d blocks, the gain is
    E21 @ inv(E11); solvability requires det(E11) > det_floor everywhere.
    """
    dim = layer.dim
    ham = layer.hamiltonian()
    values = np.empty((grid.n_steps + 1, dim, dim))
    dets = np.empty(grid.n_steps + 1)
    for k, t in enumerate(grid.t):
        flow = matrix_exponential(ham, t - grid.horizon)
        e11 = flow[:dim, :dim]
        e21 = flow[dim:, :dim]
        det = np.linalg.det(e11)
        dets[k] = det
        if det <= det_floor:
            raise SolverError(
                f"Riccati denominator determinant {det:.3e} at t={t:.6g} "
                f"is at or below the floor {det_floor:.3e}")
        values[k] = np.linalg.solve(e11.T, e21.T).T
    return values, dets


def solve_matrix_riccati(params: MarketParams, grid: TimeGrid,
                         det_floor: float = 1e-10) -> MatrixRiccatiTable:
    """Solve both matrix Riccati equations on the grid via the block formula."""
    coeffs = assemble_coefficients(params)
    f, det_f = _block_formula(coeffs.broker, grid, det_floor)
    g, det_g = _block_formula(coeffs.buyer, grid, det_floor)
    return MatrixRiccatiTable(grid=grid, f=f, g=g, det_path_f=det_f, det_path_g=det_g)


def matrix_riccati_oracle(layer: LayerMatrices, grid: TimeGrid) -> np.ndarray:
    """Backward matrix RK4 for dF/dt = -F a1 + F b1 F + b2 F - a2, F(T) = 0.

    Independent of the block formula; kept as the reference route.
    """
    a1, b1, a2, b2 = layer.a1, layer.b1, layer.a2, layer.b2

    def rhs(f):
        return -f @ a1 + f @ b1 @ f + b2 @ f - a2

    t = grid.t
    values = np.empty((grid.n_steps + 1, layer.dim, layer.dim))
    values[-1] = 0.0
    for k in range(grid.n_steps - 1, -1, -1):
        h = t[k] - t[k + 1]
        fk = values[k + 1]
        k1 = rhs(fk)
        k2 = rhs(fk + 0.5 * h * k1)
        k3 = rhs(fk + 0.5 * h * k2)
        k4 = rhs(fk + h * k3)
        values[k] = fk + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(values[k])) or np.max(np.abs(values[k])) > _BLOWUP_LIMIT:
            raise SolverError(
                f"matrix Riccati blow-up between t={t[k]:.6g} and t={t[k + 1]:.6g}")
    return values


def riccati_residual(values: np.ndarray, layer: LayerMatrices,
                     grid: TimeGrid) -> float:
    """Max-norm ODE residual of a gain table at interior grid points.

    Central differences in time against -F a1 + F b1 F + b2 F - a2; small
    residuals certify that a table actually solves its Riccati equation.
    """
    a1, b1, a2, b2 = layer.a1, layer.b1, layer.a2, layer.b2
    worst = 0.0
    for k in range(1, grid.n_steps):
        dfdt = (values[k + 1] - values[k - 1]) / (2.0 * grid.dt)
        f = values[k]
        resid = dfdt - (-f @ a1 + f @ b1 @ f + b2 @ f - a2)
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst


@dataclass(frozen=True)
class SolvabilityReport:
    """Determinant minima of both denominator-block paths over the grid."""

    min_det_f: float
    argmin_t_f: float
    min_det_g: float
    argmin_t_g: float
    det_floor: float

    @property
    def ok(self) -> bool:
        return self.min_det_f > self.det_floor and self.min_det_g > self.det_floor


def solvability_check(params: MarketParams, grid: TimeGrid,
                      det_floor: float = 1e-10) -> SolvabilityReport:
    """Scan both determinant paths; report minima and where they occur.

    Unlike `solve_matrix_riccati` this never raises on a bad determinant, so
    it can be used to probe parameter sets for loss of solvability.
    """
    coeffs = assemble_coefficients(params)
    mins = []
    for layer in (coeffs.broker, coeffs.buyer):
        dim = layer.dim
        ham = layer.hamiltonian()
        dets = np.empty(grid.n_steps + 1)
        for k, t in enumerate(grid.t):
            flow = matrix_exponential(ham, t - grid.horizon)
            dets[k] = np.linalg.det(flow[:dim, :dim])
        k_min = int(np.argmin(dets))
        mins.append((float(dets[k_min]), float(grid.t[k_min])))
    return SolvabilityReport(
        min_det_f=mins[0][0], argmin_t_f=mins[0][1],
        min_det_g=mins[1][0], argmin_t_g=mins[1][1],
        det_floor=det_floor,
    )
