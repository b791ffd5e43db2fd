"""Integration-by-parts weights and Monte Carlo estimators for price and Greeks.

For a family F(zeta), H(zeta) and a direction u the weight

    pi = H a delta(u) - D_u(H a) + d_zeta H,      a = d_zeta F / D_u F,

satisfies d/dzeta E[H f(F)] = E[f(F) pi] for any payoff f.  Delta takes
H = 1, d_x S_T = S_T / x; Gamma reapplies the identity to the Delta weight;
Rho and Vega use the exact tangent of the discretized S_T in a rate shift
or a multiplicative volatility scaling.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .closed_form import bs_closed_form
from .errors import UnsupportedCombination
from .jets import space
from .malliavin import (ANALYTIC, DISCRETE, FULL_SQUARE, PAPER_REGION, RATE_SHIFT, VOL_SCALE,
                        MalliavinCache, WeightKernel, analytic_functionals, analytic_pieces, directional_logS,
                        du_functionals, propagate_jets, singular_threshold, skorohod_delta)
from .model import CHAIN_RULE, ModelSpec
from .paths import (PathBundle, TimeGrid, build_grid, draw_increment_block,
                    simulate_from_increments)

PAYOFF_KINDS = ("call", "put", "digital-call", "identity", "constant-one")
GREEKS = ("price", "delta", "gamma", "rho", "vega")
METHODS = ("malliavin", "malliavin-paper-literal", "finite-difference", "closed-form",
           "pathwise-tangent")
CORRECTED = "corrected"
LITERAL = "paper-literal"

BLOCK_SIZE = 8192
UNRELIABLE_FRACTION = 1e-3
FD_DEFAULTS = {"delta": 1e-3, "gamma": 1e-2, "rho": 1e-4, "vega": 1e-4}


@dataclass(frozen=True)
class Payoff:
    kind: str
    strike: float = 100.0

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put", "digital-call") and not self.strike > 0:
            raise ValueError("strike must be positive")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == "call":
            return np.maximum(s - self.strike, 0.0)
        if k == "put":
            return np.maximum(self.strike - s, 0.0)
        if k == "digital-call":
            return (s >= self.strike).astype(float)
        if k == "identity":
            return s.copy()
        return np.ones_like(s)

    def derivative(self, s):
        """f' almost everywhere; undefined (raises) for the digital."""
        s = np.asarray(s, dtype=float)
        k = self.kind
        if k == "call":
            return (s > self.strike).astype(float)
        if k == "put":
            return -(s < self.strike).astype(float)
        if k == "identity":
            return np.ones_like(s)
        if k == "constant-one":
            return np.zeros_like(s)
        raise UnsupportedCombination("pathwise derivative of a digital payoff is not defined")


def payoff_eval(p: Payoff, s):
    return p(s)


# --- weights ----------------------------------------------------------------------

def generic_ibp_weight(a, dua, H, duH, dzetaH, sko):
    return H * a * sko - (duH * a + H * dua) + dzetaH


def _safe(I, excluded):
    return np.where(excluded, 1.0, I)


def delta_weight(cache, x0, mode=CORRECTED, ST=None):
    """Delta weight per path (zero on excluded paths).

    ``paper-literal`` expects a cache whose D_u I is the paper-region sum and
    needs ``ST``.
    """
    I = _safe(cache.I, cache.excluded)
    if mode == CORRECTED:
        w = generic_ibp_weight(1.0 / (x0 * I), -cache.duI / (x0 * I**2), 1.0, 0.0, 0.0, cache.sko)
    elif mode == LITERAL:
        w = (cache.sko / I - ST * (1.0 - cache.duI / I**2)) / x0
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    return np.where(cache.excluded, 0.0, w)


def gamma_weight(cache, x0, mode=CORRECTED, ST=None):
    I = _safe(cache.I, cache.excluded)
    d1, d2, sko = cache.duI, cache.duduI, cache.sko
    if d2 is None:
        raise ValueError("gamma weight needs D_u^2 I")
    if mode == CORRECTED:
        H = sko / I + d1 / I**2
        duH = cache.duSko / I - sko * d1 / I**2 + d2 / I**2 - 2 * d1**2 / I**3
        w = ((H * sko - duH) / I + H * d1 / I**2 - H) / x0**2
    elif mode == LITERAL:
        ratio = d1 / I**2
        H = sko / I - ST * (1.0 - ratio)
        duH = -ratio * sko - ST * (I - d1 / I - d2 / I**2 + 2 * d1**2 / I**3)
        dxH = -ST * (1.0 - ratio) / x0
        w = (H * sko / (x0 * I) - (2 * H + duH / I + H * ratio) / x0 + dxH) / x0
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    return np.where(cache.excluded, 0.0, w)


def rho_vega_weight(cache, ST, tangent, du_tangent):
    """Weight for d/d(eps) E[f(S_T)] given the tangent of S_T and its D_u."""
    I = _safe(cache.I, cache.excluded)
    a = tangent / (ST * I)
    dua = du_tangent / (ST * I) - tangent / ST - tangent * cache.duI / (ST * I**2)
    w = generic_ibp_weight(a, dua, 1.0, 0.0, 0.0, cache.sko)
    return np.where(cache.excluded, 0.0, w)


def tangent_sensitivity(bundle: PathBundle, parameter: str):
    """Exact d S_T / d eps of the discretized path for a rate shift or vol scaling."""
    if parameter not in (RATE_SHIFT, VOL_SCALE):
        raise ValueError(f"unknown parameter {parameter!r}")
    _, ls, _ = propagate_jets(bundle, space((1,)), lambda i: [], parameter, 0)
    return bundle.ST * np.broadcast_to(ls.derivative((1,)), (bundle.n_paths,))


def _param_jets(bundle, u, parameter):
    # I, D_u I, d_eps log S_T, D_u d_eps log S_T from one jet pass
    ls = directional_logS(bundle, u, order=2, param=parameter)
    P = bundle.n_paths
    get = lambda m: np.broadcast_to(ls.derivative(m), (P,)).copy()
    return get((1, 0)), get((2, 0)), get((0, 1)), get((1, 1))


# --- estimates --------------------------------------------------------------------

@dataclass
class GreekEstimate:
    greek: str
    method: str
    value: float
    stderr: float
    n_paths: int
    n_excluded: int
    n_steps: int
    seed: int
    runtime_ms: int
    discounted: bool
    payoff: str = ""
    strike: float = float("nan")
    model: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        if self.n_paths == 0:
            return True
        return self.n_excluded / self.n_paths <= UNRELIABLE_FRACTION

    def as_dict(self) -> dict:
        d = asdict(self)
        d["reliable"] = self.reliable
        return d


@dataclass
class _Stats:
    n: int
    mean: float
    m2: float
    excluded: int

    @classmethod
    def of(cls, x, excluded):
        x = np.asarray(x, dtype=float)
        n = x.size
        if n == 0:
            return cls(0, 0.0, 0.0, int(excluded))
        mean = float(np.sum(x) / n)
        return cls(n, mean, float(np.sum((x - mean) ** 2)), int(excluded))


def _combine(a: _Stats, b: _Stats) -> _Stats:
    n = a.n + b.n
    if n == 0:
        return _Stats(0, 0.0, 0.0, a.excluded + b.excluded)
    d = b.mean - a.mean
    mean = a.mean + d * b.n / n
    m2 = a.m2 + b.m2 + d * d * a.n * b.n / n
    return _Stats(n, mean, m2, a.excluded + b.excluded)


def pairwise_reduce(stats):
    """Fixed binary tree over block results; independent of how blocks were scheduled."""
    stats = list(stats)
    if not stats:
        raise ValueError("nothing to reduce")
    while len(stats) > 1:
        nxt = [_combine(stats[k], stats[k + 1]) for k in range(0, len(stats) - 1, 2)]
        if len(stats) % 2:
            nxt.append(stats[-1])
        stats = nxt
    return stats[0]


@dataclass(frozen=True)
class _Job:
    model: ModelSpec
    payoff: Payoff
    greek: str
    method: str
    u: WeightKernel
    n_paths: int
    n_steps: int
    seed: int
    discount: bool
    backend: str
    region: str
    convention: str
    antithetic: bool
    fd_bump: float | None
    block_size: int


def _discount(model: ModelSpec, grid: TimeGrid):
    return math.exp(-sum(model.r(t) * dt for t, dt in zip(grid.times[:-1], grid.dt)))


def _malliavin_contrib(job: _Job, bundle: PathBundle, disc: float):
    model, greek, f = bundle.model, job.greek, job.payoff
    ST = bundle.ST
    fx = f(ST)
    none = np.zeros(bundle.n_paths, dtype=bool)
    if greek == "price":
        return disc * fx, none
    literal = job.method == "malliavin-paper-literal"
    if greek in ("delta", "gamma"):
        order = 2 if greek == "delta" else 3
        if literal:
            pc = analytic_pieces(bundle, job.convention, need_third=order == 3)
            I, duI, duduI = analytic_functionals(pc, job.u.on_grid(bundle.grid), PAPER_REGION,
                                                 order)
            sko, duSko = skorohod_delta(job.u, bundle)
            cache = MalliavinCache(I, duI, duduI, sko, duSko,
                                   np.abs(I) < singular_threshold(model), ANALYTIC, PAPER_REGION)
            mode = LITERAL
        else:
            cache = du_functionals(bundle, job.u, job.backend, order, job.region, job.convention)
            mode = CORRECTED
        wfn = delta_weight if greek == "delta" else gamma_weight
        return disc * fx * wfn(cache, model.x0, mode, ST), cache.excluded
    if literal:
        raise UnsupportedCombination("paper-literal weights exist for delta and gamma only")
    param = RATE_SHIFT if greek == "rho" else VOL_SCALE
    I, duI, L, duL = _param_jets(bundle, job.u, param)
    sko, duSko = skorohod_delta(job.u, bundle)
    cache = MalliavinCache(I, duI, None, sko, duSko, np.abs(I) < singular_threshold(model),
                           DISCRETE, FULL_SQUARE)
    tangent = ST * L
    du_tangent = ST * (I * L + duL)
    w = rho_vega_weight(cache, ST, tangent, du_tangent)
    if greek == "rho":
        x = disc * fx * (w - _discount_sensitivity(job, bundle))
        return np.where(cache.excluded, 0.0, x), cache.excluded
    return disc * fx * w / model.vol_level, cache.excluded


def _discount_sensitivity(job, bundle):
    # -d/d(eps) log discount factor under r -> r + eps
    return bundle.grid.maturity if job.discount else 0.0


def _pathwise_contrib(job: _Job, bundle: PathBundle, disc: float):
    f, ST, model = job.payoff, bundle.ST, bundle.model
    none = np.zeros(bundle.n_paths, dtype=bool)
    if job.greek == "price":
        return disc * f(ST), none
    if job.greek == "gamma":
        raise UnsupportedCombination("pathwise gamma needs f'' and is not provided")
    fp = f.derivative(ST)
    if job.greek == "delta":
        return disc * fp * ST / model.x0, none
    tau = tangent_sensitivity(bundle, RATE_SHIFT if job.greek == "rho" else VOL_SCALE)
    if job.greek == "rho":
        return disc * (fp * tau - _discount_sensitivity(job, bundle) * f(ST)), none
    return disc * fp * tau / model.vol_level, none


def _fd_contrib(job: _Job, grid: TimeGrid, dW, dWp):
    model, f, greek = job.model, job.payoff, job.greek
    h = job.fd_bump if job.fd_bump is not None else FD_DEFAULTS.get(greek, 0.0)
    none = np.zeros(dW.shape[0], dtype=bool)

    def run(m):
        b = simulate_from_increments(m, grid, dW, dWp)
        d = _discount(m, grid) if job.discount else 1.0
        return d * f(b.ST)

    if greek == "price":
        return run(model), none
    if greek == "delta":
        up, dn = run(model.bumped(x0_factor=1 + h)), run(model.bumped(x0_factor=1 - h))
        return (up - dn) / (2 * h * model.x0), none
    if greek == "gamma":
        up, mid, dn = (run(model.bumped(x0_factor=1 + h)), run(model),
                       run(model.bumped(x0_factor=1 - h)))
        return (up - 2 * mid + dn) / (h * model.x0) ** 2, none
    if greek == "rho":
        up, dn = run(model.bumped(rate_shift=h)), run(model.bumped(rate_shift=-h))
        return (up - dn) / (2 * h), none
    up, dn = run(model.bumped(vol_scale=h)), run(model.bumped(vol_scale=-h))
    return (up - dn) / (2 * h * model.vol_level), none


def _block_contrib(job: _Job, start: int, stop: int):
    grid = build_grid(job.model.maturity, job.n_steps)
    idx = np.arange(start, stop)
    dW, dWp = draw_increment_block(job.seed, idx, grid)
    signs = (1.0, -1.0) if job.antithetic else (1.0,)
    parts, excl = [], np.zeros(idx.size, dtype=bool)
    for sgn in signs:
        if job.method == "finite-difference":
            x, e = _fd_contrib(job, grid, sgn * dW, sgn * dWp)
        else:
            bundle = simulate_from_increments(job.model, grid, sgn * dW, sgn * dWp, idx)
            disc = _discount(job.model, grid) if job.discount else 1.0
            if job.method == "pathwise-tangent":
                x, e = _pathwise_contrib(job, bundle, disc)
            else:
                x, e = _malliavin_contrib(job, bundle, disc)
        parts.append(x)
        excl |= e
    x = sum(parts) / len(parts)
    return x, excl


def _run_block(job: _Job, b: int) -> _Stats:
    start = b * job.block_size
    stop = min(start + job.block_size, job.n_paths)
    x, excl = _block_contrib(job, start, stop)
    return _Stats.of(x[~excl], np.count_nonzero(excl))


def _closed_form(model: ModelSpec, payoff: Payoff, greek: str, discount: bool) -> float:
    if model.name != "bs_constant":
        raise UnsupportedCombination(f"closed form is available for bs_constant only, not {model.name}")
    p = model.params
    x0, s0, r, T = model.x0, p["sigma0"], p["r"], model.maturity
    v = bs_closed_form(x0, payoff.strike, r, s0, T, greek, payoff.kind)
    if discount:
        return v
    grow = math.exp(r * T)
    if greek == "rho":
        price = bs_closed_form(x0, payoff.strike, r, s0, T, "price", payoff.kind)
        return grow * (v + T * price)
    return grow * v


def estimate(model: ModelSpec, payoff: Payoff, greek: str, method: str = "malliavin",
             u: WeightKernel | None = None, n_paths: int = 100_000, n_steps: int = 64,
             seed: int = 0, discount: bool = True, *, backend: str = DISCRETE,
             region: str = FULL_SQUARE, convention: str = CHAIN_RULE, antithetic: bool = False,
             fd_bump: float | None = None, workers: int = 1,
             block_size: int = BLOCK_SIZE) -> GreekEstimate:
    """Monte Carlo (or closed-form) estimate of ``greek`` for ``payoff``.

    Paths are processed in fixed blocks of ``block_size`` consecutive path
    indices and reduced by a fixed pairwise tree, so the value does not
    depend on ``workers``.  Vega is reported per unit of ``model.vol_level``
    under the scaling sigma -> (1 + eps) sigma.
    """
    if greek not in GREEKS:
        raise UnsupportedCombination(f"unknown greek {greek!r}")
    if method not in METHODS:
        raise UnsupportedCombination(f"unknown method {method!r}")
    t0 = time.perf_counter()
    common = dict(greek=greek, method=method, n_steps=int(n_steps), seed=int(seed),
                  discounted=bool(discount), payoff=payoff.kind, strike=float(payoff.strike),
                  model=model.name)
    if method == "closed-form":
        value = _closed_form(model, payoff, greek, discount)
        return GreekEstimate(value=float(value), stderr=0.0, n_paths=0, n_excluded=0,
                             runtime_ms=int(1000 * (time.perf_counter() - t0)), **common)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if method == "pathwise-tangent" and payoff.kind == "digital-call" and greek != "price":
        raise UnsupportedCombination("pathwise Greeks of a digital payoff vanish almost surely")
    if method == "malliavin-paper-literal" and greek in ("rho", "vega"):
        raise UnsupportedCombination("paper-literal weights exist for delta and gamma only")
    if method == "pathwise-tangent" and greek == "gamma":
        raise UnsupportedCombination("pathwise gamma needs f'' and is not provided")
    job = _Job(model, payoff, greek, method, u or WeightKernel(), int(n_paths), int(n_steps),
               int(seed), bool(discount), backend, region, convention, bool(antithetic),
               fd_bump, int(block_size))
    n_blocks = -(-job.n_paths // job.block_size)
    if workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            stats = list(ex.map(_run_block, [job] * n_blocks, range(n_blocks)))
    else:
        stats = [_run_block(job, b) for b in range(n_blocks)]
    tot = pairwise_reduce(stats)
    kept = tot.n
    stderr = math.sqrt(tot.m2 / (kept - 1)) / math.sqrt(kept) if kept > 1 else float("nan")
    return GreekEstimate(value=tot.mean, stderr=stderr, n_paths=job.n_paths,
                         n_excluded=tot.excluded,
                         runtime_ms=int(1000 * (time.perf_counter() - t0)), **common)
