import io
import math

import numpy as np
import pytest

from svgreeks import (InvalidGrid, RngStream, bs_constant, build_grid, draw_increments, q_drift_y,
                      scott_exp, simulate_path, simulate_paths)
from svgreeks.greeks import Payoff, estimate
from svgreeks.paths import (coarsen_increments, draw_increment_block, simulate_from_increments,
                            write_paths_csv)

SV = scott_exp(100, 0.1, 0.2, 0.3, -0.5, 0.05, 0.08, -0.2, 0.1)


def test_grid_quarters():
    g = build_grid(1.0, 4)
    np.testing.assert_array_equal(g.times, [0, 0.25, 0.5, 0.75, 1.0])


def test_grid_single_step():
    np.testing.assert_array_equal(build_grid(2.0, 1).times, [0.0, 2.0])


def test_grid_last_node_pinned():
    g = build_grid(1.0, 3)
    assert g.times[-1] == 1.0
    assert np.all(np.diff(g.times) > 0)
    assert g.dt.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("T,n", [(1.0, 0), (0.0, 4), (-1.0, 2)])
def test_grid_invalid(T, n):
    with pytest.raises(InvalidGrid):
        build_grid(T, n)


def test_zero_increments_drift_only():
    m = bs_constant(100, 0.2, 0.05)
    for n in (1, 7, 64):
        g = build_grid(1.0, n)
        b = simulate_from_increments(m, g, np.zeros((1, n)), np.zeros((1, n)))
        assert b.ST[0] == pytest.approx(100 * math.exp(0.03), rel=1e-13)
        assert b.ST[0] == pytest.approx(103.0455, abs=1e-4)


def test_zero_increments_keep_y_without_drift():
    m = scott_exp(100, 0.4, 0.2, 0.0, -0.5, 0.05, 0.05, 0.0, 0.0)
    g = build_grid(1.0, 16)
    b = simulate_from_increments(m, g, np.zeros((1, 16)), np.zeros((1, 16)))
    np.testing.assert_array_equal(b.Y, 0.4)


def test_constant_vol_scheme_is_exact():
    m = bs_constant(100, 0.2, 0.05)
    g = build_grid(1.0, 50)
    b = simulate_paths(m, g, 9, np.arange(20))
    WT = b.dW.sum(axis=1)
    resid = np.log(b.ST / 100) - 0.2 * WT - (0.05 - 0.02) * 1.0
    assert np.max(np.abs(resid)) < 1e-13


def test_log_identity_and_positivity():
    g = build_grid(1.0, 64)
    b = simulate_paths(SV, g, 4, np.arange(200))
    assert np.all(b.S > 0)
    np.testing.assert_allclose(np.log(b.ST / SV.x0), b.logS_terms.sum(axis=1), rtol=0, atol=1e-12)
    sig = b.sigma_partial(0)[:, :-1]
    expected = sig * b.dW + (0.05 - 0.5 * sig**2) * g.dt
    np.testing.assert_allclose(b.logS_terms, expected, rtol=0, atol=1e-14)


def test_euler_update_for_y():
    g = build_grid(1.0, 32)
    b = simulate_paths(SV, g, 5, np.arange(10))
    for i in (0, 10, 31):
        drift = q_drift_y(SV, g.times[i], b.Y[:, i])
        expect = b.Y[:, i] + drift * g.dt[i] + SV.rho * 0.3 * b.dW[:, i] + 0.3 * b.dWp[:, i]
        np.testing.assert_allclose(b.Y[:, i + 1], expect, rtol=1e-14, atol=1e-14)


def test_draws_are_deterministic():
    g = build_grid(1.0, 10)
    a = draw_increments(RngStream(42, 17), g)
    b = draw_increments(RngStream(42, 17), g)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = draw_increments(RngStream(42, 18), g)
    assert not np.array_equal(a[0], c[0])


def test_block_rows_match_single_streams():
    g = build_grid(1.0, 8)
    dW, dWp = draw_increment_block(3, [5, 2, 9], g)
    for row, p in enumerate([5, 2, 9]):
        w, wp = draw_increments(RngStream(3, p), g)
        np.testing.assert_array_equal(dW[row], w)
        np.testing.assert_array_equal(dWp[row], wp)


def test_simulate_path_matches_batch():
    g = build_grid(1.0, 16)
    single = simulate_path(SV, g, RngStream(7, 3))
    batch = simulate_paths(SV, g, 7, [1, 3])
    np.testing.assert_array_equal(single.S[0], batch.S[1])


def test_antithetic_negates_increments():
    g = build_grid(1.0, 16)
    a = simulate_paths(SV, g, 7, [0, 1])
    b = simulate_paths(SV, g, 7, [0, 1], antithetic=True)
    np.testing.assert_array_equal(a.dW, -b.dW)
    np.testing.assert_array_equal(a.dWp, -b.dWp)


def test_increment_moments_over_a_million_paths():
    g = build_grid(1.0, 4)
    N = 1_000_000
    dW, dWp = draw_increment_block(2024, np.arange(N), g)
    for i in range(4):
        corr = np.corrcoef(dW[:, i], dWp[:, i])[0, 1]
        assert -0.004 <= corr <= 0.004
        for x in (dW[:, i], dWp[:, i]):
            ratio = x.var() / g.dt[i]
            assert 0.994 <= ratio <= 1.006
            assert abs(x.mean()) <= 4 * math.sqrt(g.dt[i] / N)


def test_martingale_zero_rate():
    m = bs_constant(100, 0.2, 0.0)
    g = build_grid(1.0, 8)
    b = simulate_paths(m, g, 11, np.arange(50_000))
    se = b.ST.std(ddof=1) / math.sqrt(b.n_paths)
    assert abs(b.ST.mean() - 100.0) <= 4 * se


def test_discounted_price_is_martingale_under_sv():
    g = build_grid(1.0, 32)
    b = simulate_paths(SV, g, 12, np.arange(50_000))
    disc = b.ST * math.exp(-0.05)
    se = disc.std(ddof=1) / math.sqrt(b.n_paths)
    assert abs(disc.mean() - 100.0) <= 4 * se


def test_step_count_irrelevant_for_constant_vol():
    m = bs_constant(100, 0.2, 0.05)
    f = Payoff("call", 100)
    a = estimate(m, f, "price", "malliavin", n_paths=40_000, n_steps=1, seed=1)
    b = estimate(m, f, "price", "malliavin", n_paths=40_000, n_steps=256, seed=2)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_coarsen_preserves_brownian_path():
    g = build_grid(1.0, 8)
    dW, _ = draw_increment_block(1, [0, 1], g)
    c = coarsen_increments(dW, 2)
    assert c.shape == (2, 4)
    np.testing.assert_allclose(c.sum(axis=1), dW.sum(axis=1), rtol=1e-14)


def test_path_csv_dump():
    g = build_grid(1.0, 3)
    b = simulate_paths(SV, g, 1, [4, 5])
    buf = io.StringIO()
    write_paths_csv(b, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "path_index,step,t,dW,dWp,Y,S"
    assert len(lines) == 1 + 2 * 4
    assert lines[1].startswith("4,0,0.0,")
