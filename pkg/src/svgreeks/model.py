"""Two-factor stochastic-volatility model under the pricing measure.

Dynamics (simulated directly under Q)::

    dS_t / S_t = r_t dt + sigma(t, Y_t) dW_t
    dY_t       = b(t, Y_t) dt + rho * sigY_t dW_t + sigY_t dW'_t

with the Q-drift of the volatility factor

    b(t, y) = muY_t + sigY_t * (r_t - mu_t) / sigma(t, y) + beta(t, y) * sigY_t.

Coefficient surfaces are supplied together with analytic y-partials up to
order 3; :func:`validate_model` cross-checks them by finite differences.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, DegenerateVolatility, UnsupportedOrder

SIGMA_FLOOR = 1e-12
MAX_ORDER = 3

CHAIN_RULE = "chain-rule"
PAPER_LITERAL = "paper-literal"
CONVENTIONS = (CHAIN_RULE, PAPER_LITERAL)


# --- coefficient building blocks -------------------------------------------
# Plain classes rather than lambdas so that models pickle across worker
# processes.

class Constant:
    """Deterministic function of time that is constant."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, t):
        return self.value

    def __repr__(self):
        return f"Constant({self.value!r})"


class PiecewiseConstant:
    """Right-continuous step function: ``values[k]`` on ``[knots[k], knots[k+1])``.

    ``knots[0]`` must be 0; the last value extends to +inf.
    """

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.shape != values.shape or knots.size == 0:
            raise ValueError("knots and values must be non-empty and aligned")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        self.knots = knots
        self.values = values

    def __call__(self, t):
        k = np.searchsorted(self.knots, t, side="right") - 1
        return float(self.values[max(int(k), 0)])


class Shifted:
    """``f(t) + shift``."""

    def __init__(self, base, shift):
        self.base = base
        self.shift = shift

    def __call__(self, t):
        return self.base(t) + self.shift


def _like(y, value):
    # scalar for scalar input, array of y's shape otherwise
    if np.ndim(y) == 0:
        return float(value)
    return np.full(np.shape(y), float(value))


class ConstantSurface:
    """sigma(t, y) = level; every y-partial vanishes."""

    def __init__(self, level: float):
        self.level = float(level)

    def __call__(self, t, y, k=0):
        _check_order(k)
        return _like(y, self.level if k == 0 else 0.0)


class ExpSurface:
    """sigma(t, y) = level * exp(y); every y-partial equals the surface itself."""

    def __init__(self, level: float):
        self.level = float(level)

    def __call__(self, t, y, k=0):
        _check_order(k)
        return self.level * np.exp(y)


class AffineSurface:
    """beta(t, y) = b0 + b1 * y."""

    def __init__(self, b0: float, b1: float):
        self.b0 = float(b0)
        self.b1 = float(b1)

    def __call__(self, t, y, k=0):
        _check_order(k)
        if k == 0:
            return self.b0 + self.b1 * y
        return _like(y, self.b1 if k == 1 else 0.0)


class ScaledSurface:
    """(1 + eps) * base(t, y), including every partial."""

    def __init__(self, base, eps: float):
        self.base = base
        self.eps = float(eps)

    def __call__(self, t, y, k=0):
        return (1.0 + self.eps) * self.base(t, y, k)


def _check_order(k):
    if not 0 <= k <= MAX_ORDER:
        raise UnsupportedOrder(f"y-partial of order {k} requested; at most {MAX_ORDER} available")


# --- the model ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    x0: float
    y0: float
    maturity: float
    r: Callable
    mu: Callable
    muY: Callable
    sigY: Callable
    rho: float
    sigma: Callable
    beta: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    # derivative w.r.t. a multiplicative vol scaling is divided by this to
    # report Vega per unit of the model's volatility level
    vol_level: float = 1.0
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if not self.x0 > 0:
            raise ValueError(f"x0 must be positive, got {self.x0}")
        if not self.maturity > 0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")

    def bumped(self, *, x0_factor=1.0, rate_shift=0.0, vol_scale=0.0) -> "ModelSpec":
        """Perturbed copy: x0 -> x0*factor, r -> r + shift, sigma -> (1+scale)*sigma."""
        kw = {}
        if x0_factor != 1.0:
            kw["x0"] = self.x0 * x0_factor
        if rate_shift:
            kw["r"] = Shifted(self.r, rate_shift)
        if vol_scale:
            kw["sigma"] = ScaledSurface(self.sigma, vol_scale)
        return replace(self, **kw) if kw else self

    def describe(self) -> dict:
        return {"kind": self.name, **self.params}


def _sigma_checked(model: ModelSpec, t, y):
    s = model.sigma(t, y, 0)
    if np.any(np.abs(s) < model.sigma_floor):
        raise DegenerateVolatility(
            f"|sigma| below floor {model.sigma_floor:g} at t={t}"
        )
    return s


def q_drift_y(model: ModelSpec, t, y):
    """Drift of the volatility factor under Q."""
    s = _sigma_checked(model, t, y)
    sy = model.sigY(t)
    return model.muY(t) + sy * (model.r(t) - model.mu(t)) / s + model.beta(t, y, 0) * sy


def _inverse_sigma_partials(s0, s1, s2, s3):
    # y-derivatives of 1/sigma of orders 1..3
    d1 = -s1 / s0**2
    d2 = -s2 / s0**2 + 2 * s1**2 / s0**3
    d3 = -s3 / s0**2 + 6 * s1 * s2 / s0**3 - 6 * s1**3 / s0**4
    return d1, d2, d3


def q_drift_y_partial(model: ModelSpec, t, y, k: int, convention: str = CHAIN_RULE):
    """k-th y-derivative of the Q-drift, the integrand of the k-th variation.

    ``chain-rule`` differentiates the drift exactly.  ``paper-literal``
    reproduces the printed integrands, which treat d/dy (1/sigma^m) as
    -m/sigma^(m+1) (the factor sigma_y is dropped):

        k=1:  sigY * (-(r - mu)/sigma^2 + beta_y)
        k=2:  2 sigY (r - mu)/sigma^3 + beta_yy
        k=3: -6 sigY (r - mu)/sigma^4 + beta_yyy
    """
    if k not in (1, 2, 3):
        raise UnsupportedOrder(f"q_drift_y_partial supports orders 1..3, got {k}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    s0 = _sigma_checked(model, t, y)
    sy = model.sigY(t)
    spread = model.r(t) - model.mu(t)
    bk = model.beta(t, y, k)
    if convention == CHAIN_RULE:
        inv = _inverse_sigma_partials(s0, model.sigma(t, y, 1), model.sigma(t, y, 2),
                                      model.sigma(t, y, 3))
        return sy * (spread * inv[k - 1] + bk)
    if k == 1:
        return sy * (-spread / s0**2 + bk)
    if k == 2:
        return 2 * sy * spread / s0**3 + bk
    return -6 * sy * spread / s0**4 + bk


# --- validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    min_abs_sigma: float
    partial_errors: dict
    degenerate: bool
    partials_ok: bool
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return not self.degenerate and self.partials_ok


def _rel_err(a, b):
    scale = np.maximum(np.abs(b), 1e-8)
    return float(np.max(np.abs(a - b) / scale))


def validate_model(model: ModelSpec, box=None, n_t: int = 5, n_y: int = 41,
                   tol: float = 1e-5) -> ValidationReport:
    """Check non-degeneracy of sigma and consistency of supplied partials.

    ``box`` is ``((t_lo, t_hi), (y_lo, y_hi))``; defaults to ``[0, T] x [y0-3, y0+3]``.
    Partials of order k are compared with central differences of order k-1
    at step 1e-5*(1+|y|).
    """
    if box is None:
        box = ((0.0, model.maturity), (model.y0 - 3.0, model.y0 + 3.0))
    (t_lo, t_hi), (y_lo, y_hi) = box
    if t_hi < t_lo or y_hi < y_lo:
        raise ValueError("empty validation box")
    ts = np.linspace(t_lo, t_hi, n_t)
    ys = np.linspace(y_lo, y_hi, n_y)
    h = 1e-5 * (1.0 + np.abs(ys))

    min_sig = math.inf
    errors = {("sigma", k): 0.0 for k in (1, 2, 3)}
    errors.update({("beta", k): 0.0 for k in (1, 2, 3)})
    for t in ts:
        s = np.asarray(model.sigma(t, ys, 0), dtype=float)
        min_sig = min(min_sig, float(np.min(np.abs(s))))
        for name, fn in (("sigma", model.sigma), ("beta", model.beta)):
            for k in (1, 2, 3):
                fd = (np.asarray(fn(t, ys + h, k - 1)) - np.asarray(fn(t, ys - h, k - 1))) / (2 * h)
                errors[(name, k)] = max(errors[(name, k)], _rel_err(np.asarray(fn(t, ys, k)), fd))
    degenerate = min_sig < model.sigma_floor
    partials_ok = all(e <= tol for e in errors.values())
    return ValidationReport(min_sig, {f"{n}_{k}": v for (n, k), v in errors.items()},
                            degenerate, partials_ok, tol)


# --- built-in models ---------------------------------------------------------

def bs_constant(x0: float, sigma0: float, r: float, maturity: float = 1.0) -> ModelSpec:
    """Deterministic-volatility reduction: sigma = sigma0, sigY = 0."""
    return ModelSpec(
        x0=float(x0), y0=0.0, maturity=float(maturity),
        r=Constant(r), mu=Constant(r), muY=Constant(0.0), sigY=Constant(0.0),
        rho=0.0, sigma=ConstantSurface(sigma0), beta=AffineSurface(0.0, 0.0),
        name="bs_constant",
        params={"x0": x0, "sigma0": sigma0, "r": r, "maturity": maturity},
        vol_level=float(sigma0),
    )


def scott_exp(x0: float, y0: float, sigma_bar: float, nu: float, rho: float,
              r: float, mu: float, b0: float = 0.0, b1: float = 0.0,
              maturity: float = 1.0) -> ModelSpec:
    """Exponential-volatility model sigma = sigma_bar*exp(y), dY = b dt + nu(rho dW + dW')."""
    return ModelSpec(
        x0=float(x0), y0=float(y0), maturity=float(maturity),
        r=Constant(r), mu=Constant(mu), muY=Constant(0.0), sigY=Constant(nu),
        rho=float(rho), sigma=ExpSurface(sigma_bar), beta=AffineSurface(b0, b1),
        name="scott_exp",
        params={"x0": x0, "y0": y0, "sigma_bar": sigma_bar, "nu": nu, "rho": rho,
                "r": r, "mu": mu, "b0": b0, "b1": b1, "maturity": maturity},
        vol_level=float(sigma_bar),
    )


_BUILDERS = {"bs_constant": bs_constant, "scott_exp": scott_exp}

# Defaults used when a model is selected by name only.
DEFAULT_PARAMS = {
    "bs_constant": {"x0": 100.0, "sigma0": 0.2, "r": 0.05, "maturity": 1.0},
    "scott_exp": {"x0": 100.0, "y0": 0.0, "sigma_bar": 0.2, "nu": 0.3, "rho": -0.5,
                  "r": 0.05, "mu": 0.05, "b0": -0.2, "b1": 0.0, "maturity": 1.0},
}


def model_from_dict(doc: dict[str, Any]) -> ModelSpec:
    """Build a model from ``{"kind": ..., <parameters>}``; missing parameters take defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("model", "model definition must be a JSON object")
    if "kind" not in doc:
        raise ConfigError("kind", "model definition lacks 'kind'")
    kind = doc["kind"]
    if kind not in _BUILDERS:
        raise ConfigError("kind", f"unknown model kind {kind!r}; expected one of {sorted(_BUILDERS)}")
    params = dict(DEFAULT_PARAMS[kind])
    for key, value in doc.items():
        if key == "kind":
            continue
        if key not in params:
            raise ConfigError(key, f"unknown parameter for model {kind!r}")
        try:
            params[key] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    try:
        return _BUILDERS[kind](**params)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
