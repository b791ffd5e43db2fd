"""Malliavin derivative objects along simulated paths.

Scaling convention: at scheme level the Malliavin derivative D_{t_i} is the
partial derivative with respect to the increment dW_i, and

    D_u F = sum_i u_i dt_i dF/d(dW_i),        delta(u) = sum_i u_i dW_i,

so D_u is the directional derivative along h_i = u_i dt_i.  With
I = D_u S_T / S_T = D_u log S_T one has D_u S_T = S_T I,
D_u D_u S_T = S_T (I^2 + D_u I) and D_u^3 S_T = S_T (I^3 + 3 I D_u I + D_u^2 I).

Two backends produce I, D_u I and D_u^2 I:

``discrete-exact``
    Taylor jets along h pushed through :func:`paths.scheme_step`; exact
    derivatives of the discretized system, O(n) per path.
``analytic``
    Closed-form first/second/third variations of Y and the kernel
    G(t, T) with its derivatives, discretized with left-endpoint (Ito)
    sums.  Stochastic integrals start strictly after the differentiation
    time, so D_t Y_t never multiplies dW_t.  Derivatives w.r.t. later times
    enter via the symmetric (full-square) extension, or are dropped under
    ``region="paper-region"``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, SingularWeight, UnsupportedOrder
from .jets import space
from .model import CHAIN_RULE, CONVENTIONS, q_drift_y_partial
from .paths import PathBundle, TimeGrid, scheme_step

DISCRETE = "discrete-exact"
ANALYTIC = "analytic"
BACKENDS = (DISCRETE, ANALYTIC)
FULL_SQUARE = "full-square"
PAPER_REGION = "paper-region"
REGIONS = (FULL_SQUARE, PAPER_REGION)


# --- weighting kernel ----------------------------------------------------------

@dataclass(frozen=True)
class WeightKernel:
    """Deterministic step function u(t), sampled at the left end of each step.

    ``fn`` maps an array of times to values; ``None`` means u = 1.
    """

    fn: object = None
    label: str = "one"

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        t = grid.times[:-1]
        if self.fn is None:
            u = np.ones_like(t)
        else:
            u = np.broadcast_to(np.asarray(self.fn(t), dtype=float), t.shape).copy()
        if not np.sum(u**2 * grid.dt) > 0:
            raise ValueError("weight kernel has zero L2 norm on this grid")
        return u

    @classmethod
    def indicator(cls, a: float, b: float) -> "WeightKernel":
        return cls(_Indicator(a, b), f"1[{a},{b})")


class _Indicator:
    def __init__(self, a, b):
        self.a, self.b = float(a), float(b)

    def __call__(self, t):
        t = np.asarray(t)
        return ((t >= self.a) & (t < self.b)).astype(float)


def skorohod_delta(u: WeightKernel, bundle: PathBundle):
    """delta(u) = sum u_i dW_i and D_u delta(u) = sum u_i^2 dt_i (per path)."""
    uu = u.on_grid(bundle.grid)
    return bundle.dW @ uu, float(np.sum(uu**2 * bundle.grid.dt))


# --- discrete-exact backend ------------------------------------------------------

RATE_SHIFT = "rate-shift"
VOL_SCALE = "vol-scale"
PARAMETERS = (RATE_SHIFT, VOL_SCALE)


def propagate_jets(bundle: PathBundle, jet_space, dw_seed, param=None, param_var=None):
    """Run the scheme on jets.

    ``dw_seed(i)`` returns the list of ``(var, coefficient)`` perturbations of
    dW_i; ``param`` optionally perturbs r or sigma along variable ``param_var``.
    Returns the jets of (Y_n, log(S_n / x0)) and the list of Y jets at every node.
    """
    model, grid = bundle.model, bundle.grid
    P = bundle.n_paths
    y = jet_space.constant(bundle.Y[:, 0].copy())
    ls = jet_space.constant(np.zeros(P))
    rate_shift, vol_scale = 0.0, None
    if param is not None:
        eps = jet_space.variable(0.0, param_var)
        if param == RATE_SHIFT:
            rate_shift = eps
        elif param == VOL_SCALE:
            vol_scale = eps
        else:
            raise ValueError(f"unknown parameter {param!r}")
    ys = [y]
    for i in range(grid.n_steps):
        c = [None] * jet_space.size
        c[0] = bundle.dW[:, i]
        for var, coef in dw_seed(i):
            k = jet_space.index[jet_space.unit(var)]
            c[k] = coef if c[k] is None else c[k] + coef
        dw = type(y)(jet_space, c)
        y, ls, _ = scheme_step(model, grid.times[i], grid.dt[i], y, ls, dw,
                               bundle.dWp[:, i], rate_shift, vol_scale)
        ys.append(y)
    return y, ls, ys


def directional_logS(bundle: PathBundle, u: WeightKernel, order: int = 3, param=None):
    """Jet of log(S_T/x0) along h = u dt (variable 0), optionally with a
    first-order parameter perturbation as variable 1."""
    uu = u.on_grid(bundle.grid)
    h = uu * bundle.grid.dt
    if param is None:
        sp = space((order,))
    else:
        sp = space((order, 1), max(order, 2))
    _, ls, _ = propagate_jets(bundle, sp, lambda i: [(0, h[i])] if h[i] else [],
                              param, 1 if param is not None else None)
    return ls


def discrete_tangent(bundle: PathBundle, seeds, targets=("logS",)):
    """Exact derivatives of the discretized system w.r.t. chosen increments.

    ``bundle`` must hold a single path.  ``seeds`` is an int array of shape
    (B, k): row b asks for the k-th mixed partial d^k / d(dW_{i1})...d(dW_{ik}).
    Returns a dict with ``"logS"`` -> (B,) and, if requested, ``"Y"`` -> (B, n+1).
    """
    if bundle.n_paths != 1:
        raise ValueError("discrete_tangent works on a single-path bundle")
    seeds = np.atleast_2d(np.asarray(seeds, dtype=int))
    B, k = seeds.shape
    sp = space((1,) * k)
    one = bundle.select(np.zeros(B, dtype=int))  # broadcast path over seed batch
    cols = [{} for _ in range(bundle.grid.n_steps)]
    for var in range(k):
        for i in np.unique(seeds[:, var]):
            cols[i][var] = (seeds[:, var] == i).astype(float)

    _, ls, ys = propagate_jets(one, sp, lambda i: list(cols[i].items()))
    top = (1,) * k
    out = {}
    if "logS" in targets:
        out["logS"] = np.broadcast_to(ls.derivative(top), (B,)).copy()
    if "Y" in targets:
        out["Y"] = np.stack([np.broadcast_to(yj.derivative(top), (B,)) for yj in ys], axis=1)
    return out


def tangent_matrix(bundle: PathBundle):
    """First-order tangents of one path: (dY[i, j] = dY_j/d(dW_i), G[i] = dlogS_n/d(dW_i))."""
    n = bundle.grid.n_steps
    res = discrete_tangent(bundle, np.arange(n)[:, None], targets=("logS", "Y"))
    return res["Y"], res["logS"]


# --- analytic backend -------------------------------------------------------------

def first_variation(bundle: PathBundle, convention: str = CHAIN_RULE):
    """Integrating factor E and prefactor p with D_{t_i} Y_{v_j} = p_i E_j (j >= i).

    E_j = exp(sum_{i<j} a(t_i, Y_i) dt_i), p_i = rho sigY_{t_i} / E_i.
    Arrays of shape (P, n+1).
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    model, grid = bundle.model, bundle.grid
    n = grid.n_steps
    a = np.stack([np.broadcast_to(q_drift_y_partial(model, grid.times[i], bundle.Y[:, i], 1,
                                                    convention), (bundle.n_paths,))
                  for i in range(n)], axis=1)
    with np.errstate(over="raise", invalid="raise"):
        try:
            expo = np.concatenate([np.zeros((bundle.n_paths, 1)),
                                   np.cumsum(a * grid.dt, axis=1)], axis=1)
            E = np.exp(expo)
        except FloatingPointError:
            raise NonFinite("first-variation exponent overflowed") from None
    sy = np.array([model.sigY(t) for t in grid.times])
    p = model.rho * sy / E
    return E, p


def dY_dense(E, p):
    """Dense D_{t_i} Y_{v_j} (zero for j < i) for a single path's E, p (1-D)."""
    m = np.outer(p, E)
    return np.triu(m)


@dataclass
class AnalyticPieces:
    """Per-path arrays of the analytic backend (leading axis = path)."""

    E: np.ndarray    # (P, n+1)
    p: np.ndarray    # (P, n+1)
    a2: np.ndarray   # (P, n)
    a3: np.ndarray   # (P, n)
    s: tuple         # sigma partials k=0..3, each (P, n+1)
    dW: np.ndarray   # (P, n)
    dt: np.ndarray   # (n,)
    Q2: np.ndarray   # (P, n+1) prefix sums of a2 E dt
    Q3: np.ndarray   # (P, n+1) prefix sums of a3 E^2 dt
    U: np.ndarray    # (P, n+1) prefix sums of a2 E Q2 dt

    @property
    def n(self) -> int:
        return self.dW.shape[1]

    @property
    def K(self):
        return self.dW - self.s[0][:, :-1] * self.dt


def _prefix(x):
    return np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)


def _suffix_after(x):
    # out[:, t] = sum_{v > t} x[:, v]
    c = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    return np.concatenate([c[:, 1:], np.zeros((x.shape[0], 1))], axis=1)


def analytic_pieces(bundle: PathBundle, convention: str = CHAIN_RULE,
                    need_third: bool = True) -> AnalyticPieces:
    model, grid = bundle.model, bundle.grid
    n = grid.n_steps
    E, p = first_variation(bundle, convention)
    P = bundle.n_paths

    def drift_partial(k):
        return np.stack([np.broadcast_to(q_drift_y_partial(model, grid.times[i], bundle.Y[:, i], k,
                                                           convention), (P,))
                         for i in range(n)], axis=1)

    a2 = drift_partial(2)
    a3 = drift_partial(3) if need_third else np.zeros_like(a2)
    s = tuple(bundle.sigma_partial(k) for k in range(4 if need_third else 3))
    if not need_third:
        s = s + (np.zeros_like(s[0]),)
    dt = grid.dt
    En = E[:, :n]
    Q2 = _prefix(a2 * En * dt)
    Q3 = _prefix(a3 * En**2 * dt)
    U = _prefix(a2 * En * Q2[:, :n] * dt)
    return AnalyticPieces(E, p, a2, a3, s, bundle.dW, dt, Q2, Q3, U)


def compute_G(pc: AnalyticPieces) -> np.ndarray:
    """G(t_i, T) = sigma_i + sum_{j>i} sigma_y,j D_{t_i}Y_j (dW_j - sigma_j dt), shape (P, n+1)."""
    n = pc.n
    s0, s1 = pc.s[0], pc.s[1]
    A3 = _suffix_after(s1[:, :n] * pc.E[:, :n] * pc.K)
    G = s0.copy()
    G[:, :n] = s0[:, :n] + pc.p[:, :n] * A3
    return G


def _g_factor(pc: AnalyticPieces):
    # D_{t_s} G(t_t, T) = p_s * g_t for s <= t
    n = pc.n
    E, Kv, dt = pc.E[:, :n], pc.K, pc.dt
    s1, s2 = pc.s[1][:, :n], pc.s[2][:, :n]
    Q2 = pc.Q2[:, :n]
    A1 = _suffix_after(s2 * E**2 * Kv)
    A2 = _suffix_after(s1 * E * Q2 * Kv)
    A3 = _suffix_after(s1 * E * Kv)
    A4 = _suffix_after(s1**2 * E**2 * dt)
    return s1 * E + pc.p[:, :n] * (A1 + A2 - Q2 * A3 - A4)


def _mn_factors(pc: AnalyticPieces):
    # D_{t_r} D_{t_s} G(t_t, T) = p_r p_s (m_t - Q2_s n_t) for r <= s <= t
    n, P = pc.n, pc.E.shape[0]
    E = pc.E[:, :n]
    s0, s1, s2, s3 = (x[:, :n] for x in pc.s)
    c0 = s0 * s1
    c1 = s1**2 + s0 * s2
    c2 = 3 * s1 * s2 + s0 * s3
    Q2, Q3, U = pc.Q2[:, :n], pc.Q3[:, :n], pc.U[:, :n]
    dW, dt = pc.dW, pc.dt
    alpha = np.zeros((P, n))
    beta = np.zeros((P, n))
    for t in range(n - 1):
        v = slice(t + 1, n)
        X = Q2[:, v] - Q2[:, t:t + 1]
        rest = X**2 + (Q3[:, v] - Q3[:, t:t + 1]) + (U[:, v] - U[:, t:t + 1])
        Ev = E[:, v]
        lin = 3 * X + Q2[:, t:t + 1]
        dwv, dtv = dW[:, v], dt[v]
        alpha[:, t] = np.sum((Ev**2 * s2[:, v] * lin + Ev**3 * s3[:, v] + s1[:, v] * Ev * rest) * dwv
                             - (Ev**2 * c1[:, v] * lin + Ev**3 * c2[:, v] + c0[:, v] * Ev * rest) * dtv,
                             axis=1)
        beta[:, t] = np.sum((Ev**2 * s2[:, v] + s1[:, v] * Ev * X) * dwv
                            - (Ev**2 * c1[:, v] + c0[:, v] * Ev * X) * dtv, axis=1)
    p = pc.p[:, :n]
    m = p * alpha + s2 * E**2 + s1 * E * Q2
    nn = p * beta + s1 * E
    return m, nn


def compute_dG(pc: AnalyticPieces):
    """Separable D_{t_s} G(t_i, T) for s <= i: entry = p[:, s] * g[:, i]. Returns (p, g)."""
    return pc.p[:, :pc.n], _g_factor(pc)


def compute_d2G(pc: AnalyticPieces):
    """Factored D_{t_r} D_{t_s} G(t_i, T) for r <= s <= i.

    Returns (p, m, nn, Q2); the entry is p[:, r] p[:, s] (m[:, i] - Q2[:, s] nn[:, i]).
    """
    m, nn = _mn_factors(pc)
    return pc.p[:, :pc.n], m, nn, pc.Q2[:, :pc.n]


def analytic_functionals(pc: AnalyticPieces, u_vals, region: str = FULL_SQUARE, order: int = 3):
    """(I, D_u I, D_u^2 I) per path from the analytic backend; O(n) + O(n^2) for order 3."""
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    n = pc.n
    w = u_vals * pc.dt                      # (n,)
    G = compute_G(pc)[:, :n]
    I = G @ w
    p = pc.p[:, :n]
    g = _g_factor(pc)
    Pu = np.cumsum(w * p, axis=1)           # inclusive prefix
    ordered = np.sum(w * g * Pu, axis=1)
    if region == PAPER_REGION:
        duI = ordered
    else:
        duI = 2 * ordered - np.sum(w**2 * p * g, axis=1)
    if order < 3:
        return I, duI, None
    m, nn = _mn_factors(pc)
    Q2 = pc.Q2[:, :n]
    base = w * p * Pu
    T = np.sum(w * (m * np.cumsum(base, axis=1) - nn * np.cumsum(base * Q2, axis=1)), axis=1)
    if region == PAPER_REGION:
        return I, duI, T
    sq = w**2 * p**2
    A = np.sum(w * (m * np.cumsum(sq, axis=1) - nn * np.cumsum(sq * Q2, axis=1)), axis=1)
    diag_h = m - Q2 * nn
    B = np.sum(w**2 * p * Pu * diag_h, axis=1)
    Dg = np.sum(w**3 * p**2 * diag_h, axis=1)
    return I, duI, 6 * T - 3 * A - 3 * B + Dg


# direct (unfactored) evaluation of the printed formulas, single path ----------

class AnalyticTables:
    """Entry-wise analytic derivatives for one path, evaluated term by term.

    O(n) work per entry; meant for verification and small grids.
    """

    def __init__(self, pc: AnalyticPieces, row: int = 0):
        self.E = pc.E[row]
        self.p = pc.p[row]
        self.a2 = pc.a2[row]
        self.a3 = pc.a3[row]
        self.s = [x[row] for x in pc.s]
        self.dW = pc.dW[row]
        self.dt = pc.dt
        self.n = pc.n

    def dY(self, i, v):
        v = np.asarray(v)
        return np.where(v >= i, self.p[i] * self.E[v], 0.0)

    def d2Y(self, s, t, v):
        """D_s D_t Y_v for s <= t <= v."""
        s, t = min(s, t), max(s, t)
        out = np.zeros(np.shape(v))
        for k, vv in enumerate(np.atleast_1d(v)):
            al = np.arange(t, vv)
            out.flat[k] = self.dY(t, vv) * np.sum(self.a2[al] * self.dY(s, al) * self.dt[al])
        return out

    def d3Y(self, r, s, t, v):
        r, s, t = sorted((r, s, t))
        out = np.zeros(np.shape(v))
        for k, vv in enumerate(np.atleast_1d(v)):
            al = np.arange(t, vv)
            first = self.d2Y(r, t, vv) * np.sum(self.a2[al] * self.dY(s, al) * self.dt[al])
            second = self.dY(t, vv) * np.sum(
                (self.a3[al] * self.dY(r, al) * self.dY(s, al) + self.a2[al] * self.d2Y(r, s, al))
                * self.dt[al])
            out.flat[k] = first + second
        return out

    def G(self, i):
        s0, s1 = self.s[0], self.s[1]
        v = np.arange(i + 1, self.n)
        return s0[i] + np.sum(s1[v] * self.dY(i, v) * (self.dW[v] - s0[v] * self.dt[v]))

    def dG(self, s, i):
        """D_{t_s} G(t_i, T); for s > i the Ito boundary form, i.e. the symmetric entry."""
        if s > i:
            s, i = i, s
        s0, s1, s2 = self.s[0], self.s[1], self.s[2]
        v = np.arange(i + 1, self.n)
        K = self.dW[v] - s0[v] * self.dt[v]
        dd = self.dY(s, v) * self.dY(i, v)
        return (s1[i] * self.dY(s, i)
                + np.sum((s2[v] * dd + s1[v] * self.d2Y(s, i, v)) * K)
                - np.sum(s1[v]**2 * dd * self.dt[v]))

    def d2G(self, r, s, i):
        """D_{t_r} D_{t_s} G(t_i, T); arguments are sorted first (symmetric extension)."""
        r, s, i = sorted((r, s, i))
        s0, s1, s2, s3 = self.s
        v = np.arange(i + 1, self.n)
        c0, c1, c2 = s0 * s1, s1**2 + s0 * s2, 3 * s1 * s2 + s0 * s3
        yr, ys, yi = self.dY(r, v), self.dY(s, v), self.dY(i, v)
        yrs, yri, ysi = self.d2Y(r, s, v), self.d2Y(r, i, v), self.d2Y(s, i, v)
        yrsi = self.d3Y(r, s, i, v)
        mixed = yrs * yi + ys * yri
        dw_part = (mixed * s2[v] + yr * ys * yi * s3[v] + s1[v] * yrsi + s2[v] * yr * ysi) * self.dW[v]
        dv_part = (mixed * c1[v] + c2[v] * yr * ys * yi + c1[v] * yr * ysi + c0[v] * yrsi) * self.dt[v]
        return (np.sum(dw_part) - np.sum(dv_part)
                + s2[i] * self.dY(r, i) * self.dY(s, i) + s1[i] * self.d2Y(r, s, i))

    def dG_table(self, region: str = FULL_SQUARE):
        n = self.n
        out = np.zeros((n, n))
        for s in range(n):
            for i in range(s, n):
                out[s, i] = self.dG(s, i)
                if region == FULL_SQUARE:
                    out[i, s] = out[s, i]
        return out


# --- caches -----------------------------------------------------------------------

@dataclass
class MalliavinCache:
    """Scalar functionals per path (arrays over the path axis)."""

    I: np.ndarray
    duI: np.ndarray
    duduI: np.ndarray | None
    sko: np.ndarray
    duSko: float
    excluded: np.ndarray
    backend: str
    region: str

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(self.excluded))


def singular_threshold(model, eps_rel: float = 1e-10) -> float:
    return eps_rel * abs(float(model.sigma(0.0, model.y0, 0))) * model.maturity


def du_functionals(bundle: PathBundle, u: WeightKernel | None = None, backend: str = DISCRETE,
                   order: int = 3, region: str = FULL_SQUARE, convention: str = CHAIN_RULE,
                   eps_I: float | None = None, strict: bool = False) -> MalliavinCache:
    """I, D_u I, D_u^2 I and delta(u) for every path of ``bundle``.

    Paths with |I| < eps_I are flagged in ``excluded``; with ``strict`` a
    :class:`SingularWeight` is raised instead.  The discrete backend is
    always full-square (it is exact); ``region``/``convention`` steer the
    analytic backend only.
    """
    if order not in (1, 2, 3):
        raise UnsupportedOrder(f"order must be 1, 2 or 3, got {order}")
    u = u or WeightKernel()
    if backend == DISCRETE:
        ls = directional_logS(bundle, u, order)
        I = np.broadcast_to(ls.derivative((1,)), (bundle.n_paths,)).copy()
        duI = np.broadcast_to(ls.derivative((2,)), (bundle.n_paths,)).copy() if order >= 2 \
            else np.zeros(bundle.n_paths)
        duduI = np.broadcast_to(ls.derivative((3,)), (bundle.n_paths,)).copy() if order >= 3 \
            else None
        region = FULL_SQUARE
    elif backend == ANALYTIC:
        pc = analytic_pieces(bundle, convention, need_third=order >= 3)
        I, duI, duduI = analytic_functionals(pc, u.on_grid(bundle.grid), region, order)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    sko, duSko = skorohod_delta(u, bundle)
    if not (np.all(np.isfinite(I)) and np.all(np.isfinite(duI))):
        raise NonFinite("Malliavin functionals are not finite")
    eps = singular_threshold(bundle.model) if eps_I is None else eps_I
    excluded = np.abs(I) < eps
    if strict and excluded.any():
        raise SingularWeight(f"|D_u log S_T| below {eps:g} on {excluded.sum()} path(s)")
    return MalliavinCache(I, duI, duduI, sko, duSko, excluded, backend, region)


def write_weights_csv(cache: MalliavinCache, path_indices, fh) -> None:
    """Debug dump of the per-path functionals."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_index", "I", "duI", "duduI", "delta_u", "excluded"])
    for k, p in enumerate(path_indices):
        dd = "" if cache.duduI is None else repr(float(cache.duduI[k]))
        w.writerow([int(p), repr(float(cache.I[k])), repr(float(cache.duI[k])), dd,
                    repr(float(cache.sko[k])), int(bool(cache.excluded[k]))])
