"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line (printed in the terminal summary) before
asserting, so the full run shows the status of every criterion.
"""
import io
import math
import time

import numpy as np
import pytest

from svgreeks import (Payoff, bs_closed_form, bs_constant, build_grid, du_functionals, estimate,
                      scott_exp, simulate_paths)
from svgreeks.cli import compare_report, main
from svgreeks.malliavin import (analytic_pieces, compute_d2G, compute_dG, compute_G,
                                discrete_tangent)
from svgreeks.paths import coarsen_increments, draw_increment_block, simulate_from_increments

BS = bs_constant(100, 0.2, 0.05)
SV = scott_exp(100, 0.0, 0.2, 0.3, -0.5, 0.05, 0.05, -0.2, 0.0)
# With r = mu and a flat beta the first variation is exactly rho*nu on both
# backends and G coincides term by term, so the convergence check needs a
# drift spread and a sloped beta to have anything to measure.
SV_CONV = scott_exp(100, 0.0, 0.2, 0.3, -0.5, 0.05, 0.08, -0.2, 0.1)
CALL = Payoff("call", 100)
DIGITAL = Payoff("digital-call", 100)
DELTA_CF = 0.636831
GAMMA_CF = 0.018762


def record(log, number, ok, detail):
    log.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    return ok


def z_score(a, b):
    return (a.value - b.value) / math.hypot(a.stderr, b.stderr)


@pytest.fixture(scope="module")
def digital_runs():
    kw = dict(n_paths=1_000_000, n_steps=64, seed=3)
    mall = estimate(BS, DIGITAL, "delta", **kw)
    fd = estimate(BS, DIGITAL, "delta", "finite-difference", fd_bump=1e-3, **kw)
    lit = estimate(BS, DIGITAL, "delta", "malliavin-paper-literal", **kw)
    return mall, fd, lit


def test_criterion_1_black_scholes_delta(acceptance_log):
    t0 = time.perf_counter()
    e = estimate(BS, CALL, "delta", n_paths=200_000, n_steps=64, seed=1)
    secs = time.perf_counter() - t0
    ok = abs(e.value - DELTA_CF) <= 3 * e.stderr and secs <= 30
    record(acceptance_log, 1, ok, f"delta {e.value:.6f} +- {e.stderr:.6f} vs {DELTA_CF} "
           f"(|z|={abs(e.value - DELTA_CF) / e.stderr:.2f} <= 3), {secs:.1f}s <= 30s")
    assert ok


def test_criterion_2_black_scholes_gamma(acceptance_log):
    t0 = time.perf_counter()
    e = estimate(BS, CALL, "gamma", n_paths=1_000_000, n_steps=64, seed=2)
    secs = time.perf_counter() - t0
    ok = abs(e.value - GAMMA_CF) <= 3 * e.stderr and secs <= 180
    record(acceptance_log, 2, ok, f"gamma {e.value:.6f} +- {e.stderr:.6f} vs {GAMMA_CF} "
           f"(|z|={abs(e.value - GAMMA_CF) / e.stderr:.2f} <= 3), {secs:.1f}s <= 180s")
    assert ok


def test_criterion_3_digital_delta(acceptance_log, digital_runs):
    mall, fd, _ = digital_runs
    cf = bs_closed_form(100, 100, 0.05, 0.2, 1.0, "delta", "digital-call")
    ok = abs(mall.value - cf) <= 3 * mall.stderr and mall.stderr < fd.stderr
    record(acceptance_log, 3, ok, f"digital delta {mall.value:.6f} +- {mall.stderr:.6f} vs "
           f"{cf:.6f} (|z|={abs(mall.value - cf) / mall.stderr:.2f} <= 3); stderr "
           f"malliavin {mall.stderr:.2e} < FD {fd.stderr:.2e}")
    assert ok


def test_criterion_4_stochastic_vol_against_fd(acceptance_log):
    d_m = estimate(SV, CALL, "delta", n_paths=200_000, n_steps=128, seed=41)
    d_f = estimate(SV, CALL, "delta", "finite-difference", n_paths=200_000, n_steps=128, seed=42)
    g_m = estimate(SV, CALL, "gamma", n_paths=1_000_000, n_steps=128, seed=43)
    g_f = estimate(SV, CALL, "gamma", "finite-difference", n_paths=1_000_000, n_steps=128,
                   seed=44)
    zd, zg = z_score(d_m, d_f), z_score(g_m, g_f)
    ok = abs(zd) <= 3 and abs(zg) <= 4
    record(acceptance_log, 4, ok,
           f"delta malliavin {d_m.value:.5f}+-{d_m.stderr:.5f} vs FD {d_f.value:.5f}+-"
           f"{d_f.stderr:.5f} (|z|={abs(zd):.2f} <= 3); gamma {g_m.value:.6f}+-{g_m.stderr:.6f} "
           f"vs FD {g_f.value:.6f}+-{g_f.stderr:.6f} (|z|={abs(zg):.2f} <= 4)")
    assert ok


def _kernel_errors(n, fine, n_paths=4, seed=5):
    rng = np.random.default_rng(1000 + n)
    acc = {k: [0.0, 0.0] for k in ("G", "dG", "d2G")}
    for k in range(n_paths):
        dW, dWp = draw_increment_block(seed, [k], build_grid(1.0, fine))
        f = fine // n
        b = simulate_from_increments(SV_CONV, build_grid(1.0, n), coarsen_increments(dW, f),
                                     coarsen_increments(dWp, f))
        pc = analytic_pieces(b)
        p = pc.p[0]
        Ga = compute_G(pc)[0, :n]
        Gd = discrete_tangent(b, np.arange(n)[:, None])["logS"]
        s, i = np.sort(rng.integers(0, n, (3000, 2)), axis=1).T
        s, i = s[s < i], i[s < i]
        dGa = p[s] * compute_dG(pc)[1][0, i]
        dGd = discrete_tangent(b, np.stack([s, i], 1))["logS"]
        r, s, i = np.sort(rng.integers(0, n, (2000, 3)), axis=1).T
        keep = (r < s) & (s < i)
        r, s, i = r[keep], s[keep], i[keep]
        m, nn = compute_d2G(pc)[1:3]
        d2a = p[r] * p[s] * (m[0, i] - pc.Q2[0, s] * nn[0, i])
        d2d = discrete_tangent(b, np.stack([r, s, i], 1))["logS"]
        for key, a, d in (("G", Ga, Gd), ("dG", dGa, dGd), ("d2G", d2a, d2d)):
            acc[key][0] += np.sum((a - d) ** 2)
            acc[key][1] += np.sum(d**2)
    return {key: math.sqrt(a / b) for key, (a, b) in acc.items()}


def test_criterion_5_backend_convergence(acceptance_log):
    e128, e256, e512 = (_kernel_errors(n, 512) for n in (128, 256, 512))
    checks = [
        ("G", e512["G"], 0.02, e256["G"] / e512["G"], "256/512"),
        ("dG", e512["dG"], 0.05, e256["dG"] / e512["dG"], "256/512"),
        ("d2G", e256["d2G"], 0.10, e128["d2G"] / e256["d2G"], "128/256"),
    ]
    ok = all(err <= tol and 1.4 <= ratio <= 2.8 for _, err, tol, ratio, _ in checks)
    detail = "; ".join(f"{name} rel-RMS {err:.2e} <= {tol:g}, ratio {lab} {ratio:.3f} in [1.4, 2.8]"
                       for name, err, tol, ratio, lab in checks)
    record(acceptance_log, 5, ok, detail)
    assert ok


def test_criterion_6_duality_and_zero_expectation(acceptance_log):
    parts, ok = [], True
    one = Payoff("constant-one")
    for model, seed in ((BS, 60), (SV, 70)):
        b = simulate_paths(model, build_grid(1.0, 32), seed, np.arange(100_000))
        c = du_functionals(b, order=1)
        diff = b.ST * (c.sko - c.I)
        z = diff.mean() / (diff.std(ddof=1) / math.sqrt(diff.size))
        ok &= abs(z) <= 4
        parts.append(f"{model.name} duality z={z:+.2f}")
        for k, greek in enumerate(("delta", "gamma", "rho", "vega")):
            e = estimate(model, one, greek, n_paths=100_000, n_steps=32, seed=seed + 1 + k,
                         discount=False)
            z = e.value / e.stderr
            ok &= abs(z) <= 4
            parts.append(f"{greek} z={z:+.2f}")
    record(acceptance_log, 6, ok, ", ".join(parts) + " (all |z| <= 4)")
    assert ok


def test_criterion_7_identity_payoff(acceptance_log):
    ident = Payoff("identity")
    d = estimate(BS, ident, "delta", n_paths=200_000, n_steps=64, seed=80, discount=False)
    g = estimate(BS, ident, "gamma", n_paths=200_000, n_steps=64, seed=81, discount=False)
    target = math.exp(0.05)
    zd, zg = (d.value - target) / d.stderr, g.value / g.stderr
    ok = abs(zd) <= 4 and abs(zg) <= 4
    record(acceptance_log, 7, ok, f"E[S_T pi_delta] {d.value:.5f}+-{d.stderr:.5f} vs "
           f"{target:.5f} (|z|={abs(zd):.2f}); E[S_T pi_gamma] {g.value:.2e}+-{g.stderr:.1e} "
           f"vs 0 (|z|={abs(zg):.2f})")
    assert ok


def test_criterion_8_printed_weight_erratum(acceptance_log, digital_runs):
    mall, _, lit = digital_runs
    cf = estimate(BS, DIGITAL, "delta", "closed-form")
    z_lit = (lit.value - cf.value) / lit.stderr
    z_cor = (mall.value - cf.value) / mall.stderr
    flagged = {(c["a"], c["b"]): c["flagged"] for c in compare_report([lit, cf])}
    ok = abs(z_lit) > 5 and abs(z_cor) <= 3 and flagged[("malliavin-paper-literal",
                                                          "closed-form")]
    record(acceptance_log, 8, ok, f"printed-weight delta {lit.value:.5f}+-{lit.stderr:.5f} vs "
           f"closed form {cf.value:.6f} (|z|={abs(z_lit):.1f} > 5); corrected |z|={abs(z_cor):.2f}")
    assert ok


def test_criterion_9_reproducible_reports(acceptance_log, tmp_path):
    argv = ["--model", "scott_exp", "--greek", "delta,gamma,rho,vega", "--method",
            "malliavin,finite-difference", "--paths", "20000", "--steps", "32", "--seed", "9",
            "--workers", "1"]
    same = []
    for fmt in ("csv", "json"):
        outs = []
        path = tmp_path / f"report.{fmt}"  # the output path is part of the embedded config
        for _ in range(2):
            code = main(argv + ["--format", fmt, "--out", str(path)], stdout=io.StringIO(),
                        stderr=io.StringIO())
            assert code == 0
            outs.append(path.read_bytes())
        same.append(outs[0] == outs[1])
    ok = all(same)
    record(acceptance_log, 9, ok, f"two --workers 1 runs byte-identical: csv={same[0]}, "
           f"json={same[1]}")
    assert ok
