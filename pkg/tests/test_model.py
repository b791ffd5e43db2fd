import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svgreeks import (ConfigError, DegenerateVolatility, UnsupportedOrder, bs_constant,
                      model_from_dict, q_drift_y, q_drift_y_partial, scott_exp, validate_model)
from svgreeks.model import (AffineSurface, Constant, ExpSurface, ModelSpec, PiecewiseConstant,
                            load_model)


def make(sigma, beta=None, r=0.05, mu=0.05, muY=0.0, sigY=0.3, rho=-0.5, y0=0.0):
    return ModelSpec(x0=100.0, y0=y0, maturity=1.0, r=Constant(r), mu=Constant(mu),
                     muY=Constant(muY), sigY=Constant(sigY), rho=rho, sigma=sigma,
                     beta=beta or AffineSurface(0.0, 0.0))


class LinearSurface:
    """sigma(t, y) = y -- vanishes at 0."""

    def __call__(self, t, y, k=0):
        if k == 0:
            return y
        return np.ones_like(y) if k == 1 else np.zeros_like(y)


class CubicBeta:
    def __call__(self, t, y, k=0):
        return [0.1 * y**3 - y, 0.3 * y**2 - 1, 0.6 * y, 0.6 + 0 * y][k]


class SineVol:
    """sigma = 0.2 + 0.05 sin(y + t): non-trivial partials of every order."""

    def __call__(self, t, y, k=0):
        z = y + t
        return [0.2 + 0.05 * np.sin(z), 0.05 * np.cos(z), -0.05 * np.sin(z), -0.05 * np.cos(z)][k]


# --- q_drift_y ------------------------------------------------------------------

def test_q_drift_rate_equals_mu():
    m = make(ExpSurface(0.2), AffineSurface(-0.5, 0.0), muY=0.0, sigY=0.3)
    for t, y in [(0.0, 0.0), (0.3, 1.2), (0.9, -2.0)]:
        assert q_drift_y(m, t, y) == pytest.approx(-0.15, abs=1e-15)


def test_q_drift_without_vol_of_vol_is_muY():
    m = make(ExpSurface(0.2), AffineSurface(0.7, 0.3), r=0.01, mu=0.09, muY=0.42, sigY=0.0)
    assert q_drift_y(m, 0.5, 0.8) == 0.42


def test_q_drift_rate_spread():
    m = make(ExpSurface(0.2), r=0.05, mu=0.08, sigY=0.3)
    assert q_drift_y(m, 0.0, 0.0) == pytest.approx(0.3 * -0.03 / 0.2, rel=1e-14)
    assert q_drift_y(m, 0.0, 0.0) == pytest.approx(-0.045, rel=1e-12)


def test_q_drift_degenerate_volatility():
    m = make(LinearSurface())
    with pytest.raises(DegenerateVolatility):
        q_drift_y(m, 0.0, 0.0)


@given(shift=st.floats(-0.5, 0.5), y=st.floats(-2, 2), t=st.floats(0, 1))
@settings(max_examples=50, deadline=None)
def test_q_drift_depends_on_rates_only_through_spread(shift, y, t):
    a = make(SineVol(), CubicBeta(), r=0.03, mu=0.07)
    b = make(SineVol(), CubicBeta(), r=0.03 + shift, mu=0.07 + shift)
    assert q_drift_y(a, t, y) == pytest.approx(q_drift_y(b, t, y), rel=1e-12, abs=1e-12)


# --- q_drift_y_partial -----------------------------------------------------------------

def test_partial_linear_beta_when_rates_match():
    m = make(SineVol(), AffineSurface(0.1, 0.7), sigY=0.3)
    assert q_drift_y_partial(m, 0.2, 0.4, 1) == pytest.approx(0.3 * 0.7, rel=1e-14)
    assert q_drift_y_partial(m, 0.2, 0.4, 1, "paper-literal") == pytest.approx(0.21, rel=1e-14)


def test_partial_conventions_disagree_for_constant_sigma():
    m = make(bs_constant(100, 0.2, 0.05).sigma, AffineSurface(-0.2, 0.0), r=0.05, mu=0.08,
             sigY=0.3)
    assert q_drift_y_partial(m, 0.0, 0.0, 1) == 0.0
    lit = q_drift_y_partial(m, 0.0, 0.0, 1, "paper-literal")
    assert lit == pytest.approx(-0.3 * (0.05 - 0.08) / 0.2**2, rel=1e-14)
    assert lit != 0.0


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("y", [-1.3, 0.0, 0.7])
def test_partial_matches_finite_difference(k, y):
    m = make(SineVol(), CubicBeta(), r=0.02, mu=0.09, sigY=0.4)
    h = 1e-5
    lower = (lambda yy: q_drift_y(m, 0.3, yy)) if k == 1 else \
        (lambda yy: q_drift_y_partial(m, 0.3, yy, k - 1))
    fd = (lower(y + h) - lower(y - h)) / (2 * h)
    assert q_drift_y_partial(m, 0.3, y, k) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_partial_order_out_of_range():
    m = scott_exp(100, 0, 0.2, 0.3, -0.5, 0.05, 0.05)
    with pytest.raises(UnsupportedOrder):
        q_drift_y_partial(m, 0.0, 0.0, 4)
    with pytest.raises(UnsupportedOrder):
        m.sigma(0.0, 0.0, 4)


# --- validation ------------------------------------------------------------------

def test_validate_constant_vol():
    rep = validate_model(bs_constant(100, 0.2, 0.05))
    assert rep.passed
    assert rep.min_abs_sigma == pytest.approx(0.2)


def test_validate_exponential_vol():
    m = scott_exp(100, 0.0, 0.2, 0.3, -0.5, 0.05, 0.05)
    rep = validate_model(m, box=((0.0, 1.0), (-3.0, 3.0)))
    assert rep.passed
    assert rep.min_abs_sigma == pytest.approx(0.2 * math.exp(-3), rel=1e-12)
    assert rep.min_abs_sigma == pytest.approx(0.00996, abs=1e-5)


def test_validate_flags_vanishing_vol():
    rep = validate_model(make(LinearSurface()), box=((0.0, 1.0), (-1.0, 1.0)))
    assert rep.degenerate
    assert not rep.passed


def test_validate_catches_wrong_partials():
    class Wrong(SineVol):
        def __call__(self, t, y, k=0):
            v = super().__call__(t, y, k)
            return 1.01 * v if k == 2 else v

    rep = validate_model(make(Wrong()))
    assert not rep.partials_ok
    assert rep.partial_errors["sigma_2"] > 1e-3


# --- built-ins ------------------------------------------------------------------------

def test_scott_exp_partials_all_equal_sigma():
    m = scott_exp(100, 0.3, 0.2, 0.3, -0.5, 0.05, 0.05)
    ys = np.linspace(-2, 2, 9)
    for k in (1, 2, 3):
        np.testing.assert_array_equal(m.sigma(0.5, ys, k), m.sigma(0.5, ys, 0))


def test_bs_constant_partials_vanish():
    m = bs_constant(100, 0.2, 0.05)
    for k in (1, 2, 3):
        assert m.sigma(0.1, 0.4, k) == 0.0
    assert q_drift_y(m, 0.2, -1.0) == q_drift_y(m, 0.2, 3.0)


@pytest.mark.parametrize("model", [bs_constant(100, 0.2, 0.05),
                                   scott_exp(100, 0.0, 0.2, 0.3, -0.5, 0.05, 0.08, 0.1, 0.2)])
def test_builtin_partials_consistent(model):
    assert validate_model(model).partials_ok


def test_piecewise_constant():
    f = PiecewiseConstant([0.0, 0.5], [0.01, 0.03])
    assert f(0.0) == 0.01
    assert f(0.49) == 0.01
    assert f(0.5) == 0.03
    assert f(2.0) == 0.03


def test_bumped_model():
    m = scott_exp(100, 0.0, 0.2, 0.3, -0.5, 0.05, 0.05)
    b = m.bumped(x0_factor=1.01, rate_shift=0.001, vol_scale=0.1)
    assert b.x0 == pytest.approx(101.0)
    assert b.r(0.3) == pytest.approx(0.051)
    assert b.mu(0.3) == 0.05
    assert b.sigma(0.0, 0.5, 2) == pytest.approx(1.1 * m.sigma(0.0, 0.5, 2))


# --- JSON --------------------------------------------------------------------------

def test_model_from_json(tmp_path):
    doc = {"kind": "scott_exp", "x0": 90, "rho": -0.3}
    p = tmp_path / "m.json"
    p.write_text(json.dumps(doc))
    m = load_model(p)
    assert m.name == "scott_exp"
    assert m.x0 == 90.0 and m.rho == -0.3
    assert m.sigY(0.0) == 0.3


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError) as err:
        model_from_dict({"kind": "heston"})
    assert err.value.field == "kind"


def test_unknown_parameter_rejected():
    with pytest.raises(ConfigError) as err:
        model_from_dict({"kind": "bs_constant", "kappa": 2.0})
    assert err.value.field == "kappa"


def test_invalid_initial_state():
    with pytest.raises(ValueError):
        bs_constant(-1.0, 0.2, 0.05)
    with pytest.raises(ValueError):
        bs_constant(100.0, 0.2, 0.05, maturity=0.0)
