"""Model primitives: parameter containers, validation, time grids, config files.

The market has three tiers: a data buyer posting a unit price p_bu, a broker
posting a unit price p_br, and a population of n sellers whose data quality
follows a controlled mean-reverting diffusion.  Everything downstream consumes
the two containers defined here: `MarketParams` (model constants) and
`NumericalControls` (discretisation and Monte Carlo knobs).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

# JSON key for MarketParams.lam; "lambda" is reserved in Python.
_LAMBDA_KEY = "lambda"


class ConfigError(Exception):
    """Raised when a configuration file is missing keys or malformed."""


@dataclass(frozen=True)
class MarketParams:
    """Constants of the market model.

    alpha   mean-reversion speed of seller quality
    beta    effort-to-quality conversion rate
    sigma   idiosyncratic quality volatility (one Brownian motion per seller)
    sigma0  common-noise volatility (one Brownian motion shared by all sellers)
    q0      initial quality of every seller
    a       seller revenue sensitivity to the broker price
    b       seller quadratic holding cost on quality
    c       seller quadratic effort cost
    kappa   broker quadratic holding cost on quality
    rho     buyer quadratic holding cost on quality
    lam     buyer linear utility per unit of quality
    nu      buyer resale-revenue sensitivity
    horizon length T of the trading window [0, T]
    n_sellers  population size n
    """

    alpha: float
    beta: float
    sigma: float
    sigma0: float
    q0: float
    a: float
    b: float
    c: float
    kappa: float
    rho: float
    lam: float
    nu: float
    horizon: float
    n_sellers: int

    @property
    def effort_gain(self) -> float:
        """beta^2 / (2c), the rate at which adjoint value converts to drift."""
        return self.beta * self.beta / (2.0 * self.c)


@dataclass(frozen=True)
class NumericalControls:
    """Discretisation and Monte Carlo knobs with conservative defaults."""

    n_steps: int = 1000
    n_paths: int = 256
    seed: int = 42
    ode_tol: float = 1e-6
    det_floor: float = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps intervals (n_steps+1 points)."""

    t: np.ndarray
    dt: float
    n_steps: int
    horizon: float

    def __post_init__(self):
        self.t.setflags(write=False)


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Build the uniform time grid shared by every solver and simulator."""
    if horizon <= 0.0 or n_steps < 1:
        raise ValueError("grid requires horizon > 0 and n_steps >= 1")
    t = np.linspace(0.0, horizon, n_steps + 1)
    return TimeGrid(t=t, dt=horizon / n_steps, n_steps=n_steps, horizon=horizon)


@dataclass(frozen=True)
class ValidationCheck:
    """Outcome of a single named validation rule."""

    name: str
    passed: bool
    message: str
    warning: bool = False


@dataclass(frozen=True)
class ValidationReport:
    """Named pass/fail entries; `ok` means every rule passed."""

    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> tuple:
        return tuple(c for c in self.checks if not c.passed)

    @property
    def warnings(self) -> tuple:
        return tuple(c for c in self.checks if c.warning)

    def __getitem__(self, name: str) -> ValidationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


# Sign constraints. sigma/sigma0 may be zero: zero-noise runs are the
# deterministic skeleton used by several oracles.
_STRICTLY_POSITIVE = (
    "alpha", "beta", "a", "b", "c", "kappa", "rho", "lam", "nu", "horizon",
)
_NONNEGATIVE = ("sigma", "sigma0")


def validate(params: MarketParams) -> ValidationReport:
    """Check sign, finiteness, population size and concavity rules.

    The two concavity rules keep the broker and buyer objectives strictly
    concave in their own price: 2*kappa >= a^2 and 2*rho >= nu^2.  Equality
    is accepted but flagged with a warning since the optimum degenerates
    at the boundary.
    """
    checks = []

    values = {f.name: getattr(params, f.name) for f in fields(params)}
    finite = all(math.isfinite(v) for v in values.values())
    checks.append(ValidationCheck(
        name="finiteness",
        passed=finite,
        message="all parameters finite" if finite else "non-finite parameter present",
    ))

    for name in _STRICTLY_POSITIVE:
        v = values[name]
        ok = math.isfinite(v) and v > 0.0
        checks.append(ValidationCheck(
            name=f"{name}_positive", passed=ok,
            message=f"{name}={v!r} must be > 0" if not ok else f"{name}={v!r}",
        ))
    for name in _NONNEGATIVE:
        v = values[name]
        ok = math.isfinite(v) and v >= 0.0
        checks.append(ValidationCheck(
            name=f"{name}_nonnegative", passed=ok,
            message=f"{name}={v!r} must be >= 0" if not ok else f"{name}={v!r}",
        ))

    n_ok = isinstance(params.n_sellers, int) and params.n_sellers >= 2
    checks.append(ValidationCheck(
        name="population_size", passed=n_ok,
        message=f"n_sellers={params.n_sellers!r} must be an integer >= 2",
    ))

    broker_margin = 2.0 * params.kappa - params.a * params.a
    checks.append(ValidationCheck(
        name="broker_concavity",
        passed=bool(broker_margin >= 0.0),
        message=f"2*kappa - a^2 = {broker_margin!r}"
        + (" (boundary case: broker objective is not strictly concave)"
           if broker_margin == 0.0 else ""),
        warning=broker_margin == 0.0,
    ))
    buyer_margin = 2.0 * params.rho - params.nu * params.nu
    checks.append(ValidationCheck(
        name="buyer_concavity",
        passed=bool(buyer_margin >= 0.0),
        message=f"2*rho - nu^2 = {buyer_margin!r}"
        + (" (boundary case: buyer objective is not strictly concave)"
           if buyer_margin == 0.0 else ""),
        warning=buyer_margin == 0.0,
    ))

    return ValidationReport(checks=tuple(checks))


def baseline_params() -> MarketParams:
    """Baseline parameter set used by the demos and the regression tests."""
    return MarketParams(
        alpha=0.12, beta=0.4, sigma=0.5, sigma0=0.2, q0=-1.0,
        a=0.5, b=0.4, c=0.03, kappa=0.3, rho=0.25, lam=0.6, nu=0.7,
        horizon=1.0, n_sellers=30,
    )


# --- config files -----------------------------------------------------------

_MODEL_KEYS = (
    "alpha", "beta", "sigma", "sigma0", "q0", "a", "b", "c",
    "kappa", "rho", _LAMBDA_KEY, "nu", "horizon", "n_sellers",
)
_CONTROL_KEYS = ("n_steps", "n_paths", "seed", "ode_tol", "det_floor")


def params_to_dict(params: MarketParams, controls: NumericalControls) -> dict:
    """Flat JSON-ready dict; inverse of `parse_config`."""
    d = {}
    for f in fields(params):
        d[_LAMBDA_KEY if f.name == "lam" else f.name] = getattr(params, f.name)
    for f in fields(controls):
        d[f.name] = getattr(controls, f.name)
    return d


def parse_config(raw: dict) -> tuple[MarketParams, NumericalControls]:
    """Build containers from a flat dict; model keys required, control keys defaulted."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(_MODEL_KEYS) - set(_CONTROL_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(set(_MODEL_KEYS) - set(raw))
    if missing:
        raise ConfigError(f"missing model keys: {', '.join(missing)}")

    model = {}
    for key in _MODEL_KEYS:
        field = "lam" if key == _LAMBDA_KEY else key
        value = raw[key]
        if field == "n_sellers":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            model[field] = value
        else:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{key} must be a number, got {value!r}")
            model[field] = float(value)

    ctrl = {}
    defaults = NumericalControls()
    for key in _CONTROL_KEYS:
        if key not in raw:
            ctrl[key] = getattr(defaults, key)
        elif key in ("n_steps", "n_paths", "seed"):
            if not isinstance(raw[key], int) or isinstance(raw[key], bool):
                raise ConfigError(f"{key} must be an integer, got {raw[key]!r}")
            ctrl[key] = raw[key]
        else:
            if not isinstance(raw[key], (int, float)) or isinstance(raw[key], bool):
                raise ConfigError(f"{key} must be a number, got {raw[key]!r}")
            ctrl[key] = float(raw[key])
    if ctrl["n_steps"] < 1:
        raise ConfigError("n_steps must be >= 1")
    if ctrl["n_paths"] < 1:
        raise ConfigError("n_paths must be >= 1")

    return MarketParams(**model), NumericalControls(**ctrl)


def load_config(path: str) -> tuple[MarketParams, NumericalControls]:
    """Read a flat JSON config file.  Raises ConfigError on any defect."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
