"""Time grids, counter-based Brownian increments and the (S, Y) scheme.

Y follows Euler-Maruyama, S the exponential (log-Euler) scheme; coefficients
are frozen at the left end of every step.  The same :func:`scheme_step`
drives plain simulation and the jet-valued tangent recursions, so
derivatives are always derivatives of exactly this scheme.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVolatility, InvalidGrid, NonFinite
from .jets import Jet, apply_surface
from .model import ModelSpec


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    times: np.ndarray
    dt: np.ndarray

    @property
    def maturity(self) -> float:
        return float(self.times[-1])


def build_grid(T: float, n_steps: int) -> TimeGrid:
    """Uniform grid on [0, T] whose last node is T bit-exactly."""
    if n_steps < 1 or int(n_steps) != n_steps:
        raise InvalidGrid(f"n_steps must be a positive integer, got {n_steps}")
    if not T > 0:
        raise InvalidGrid(f"maturity must be positive, got {T}")
    n = int(n_steps)
    times = np.arange(n + 1) * (T / n)
    times[-1] = T
    return TimeGrid(n, times, np.diff(times))


@dataclass(frozen=True)
class RngStream:
    seed: int
    path_index: int


def _generator(seed: int, path_index: int) -> np.random.Generator:
    # Philox is counter based: the path index occupies its own counter word,
    # so each path owns a disjoint substream whatever the draw order.
    return np.random.Generator(
        np.random.Philox(key=int(seed) % 2**64, counter=[0, 0, int(path_index), 0]))


def draw_increments(stream: RngStream, grid: TimeGrid):
    """Independent increments (dW, dW') of one path, variance ``dt`` per step."""
    z = _generator(stream.seed, stream.path_index).standard_normal((2, grid.n_steps))
    sq = np.sqrt(grid.dt)
    return z[0] * sq, z[1] * sq


def draw_increment_block(seed: int, path_indices, grid: TimeGrid):
    """Stacked increments, shape (n_paths, n_steps) each; row k is path ``path_indices[k]``."""
    path_indices = np.asarray(path_indices)
    z = np.empty((path_indices.size, 2, grid.n_steps))
    # Re-keying one generator is cheaper than constructing one per path and
    # yields the same stream as _generator(seed, p).
    bitgen = np.random.Philox(key=int(seed) % 2**64)
    gen = np.random.Generator(bitgen)
    state = bitgen.state
    for k, p in enumerate(path_indices):
        state["state"]["counter"] = np.array([0, 0, int(p), 0], dtype=np.uint64)
        state["buffer_pos"] = 4  # empty output buffer
        state["has_uint32"] = 0
        bitgen.state = state
        gen.standard_normal(out=z[k])
    sq = np.sqrt(grid.dt)
    return z[:, 0] * sq, z[:, 1] * sq


def coarsen_increments(dw, factor: int):
    """Sum consecutive groups of ``factor`` increments (same Brownian path, coarser grid)."""
    dw = np.asarray(dw)
    n = dw.shape[-1]
    if n % factor:
        raise InvalidGrid(f"{n} steps not divisible by {factor}")
    return dw.reshape(dw.shape[:-1] + (n // factor, factor)).sum(axis=-1)


def scheme_step(model: ModelSpec, t, dt, y, logs, dw, dwp, rate_shift=0.0, vol_scale=None):
    """One step of the scheme.  ``y``, ``logs``, ``dw``, shifts may be arrays or jets.

    ``rate_shift`` adds to r (in both the log-S drift and the Q-drift of Y);
    ``vol_scale`` multiplies sigma by ``1 + vol_scale``.
    Returns ``(y_next, logs_next, sigma_t)``.
    """
    sig = apply_surface(model.sigma, t, y)
    if vol_scale is not None:
        sig = sig * (1.0 + vol_scale)
    sy = model.sigY(t)
    rate = model.r(t) + rate_shift
    if sy == 0.0:
        drift = model.muY(t)
    else:
        drift = model.muY(t) + sy * (rate - model.mu(t)) / sig \
            + apply_surface(model.beta, t, y) * sy
    y_next = y + drift * dt + model.rho * sy * dw + sy * dwp
    logs_next = logs + sig * dw + (rate - 0.5 * (sig * sig)) * dt
    return y_next, logs_next, sig


@dataclass
class PathBundle:
    """A batch of simulated trajectories; arrays have a leading path axis."""

    model: ModelSpec
    grid: TimeGrid
    dW: np.ndarray       # (P, n)
    dWp: np.ndarray      # (P, n)
    Y: np.ndarray        # (P, n+1)
    S: np.ndarray        # (P, n+1)
    logS_terms: np.ndarray  # (P, n)
    path_indices: np.ndarray | None = None
    _sig: dict = field(default_factory=dict, repr=False)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def ST(self) -> np.ndarray:
        return self.S[:, -1]

    def sigma_partial(self, k: int) -> np.ndarray:
        """sigma(t_i, Y_i, k) at all nodes, shape (P, n+1); cached."""
        if k not in self._sig:
            t = self.grid.times
            self._sig[k] = np.stack(
                [np.broadcast_to(self.model.sigma(t[i], self.Y[:, i], k), (self.n_paths,))
                 for i in range(self.grid.n_steps + 1)], axis=1)
        return self._sig[k]

    def beta_partial(self, k: int) -> np.ndarray:
        key = ("beta", k)
        if key not in self._sig:
            t = self.grid.times
            self._sig[key] = np.stack(
                [np.broadcast_to(self.model.beta(t[i], self.Y[:, i], k), (self.n_paths,))
                 for i in range(self.grid.n_steps + 1)], axis=1)
        return self._sig[key]

    def select(self, rows) -> "PathBundle":
        idx = None if self.path_indices is None else self.path_indices[rows]
        out = PathBundle(self.model, self.grid, self.dW[rows], self.dWp[rows], self.Y[rows],
                         self.S[rows], self.logS_terms[rows], idx)
        out._sig = {k: v[rows] for k, v in self._sig.items()}
        return out


def simulate_from_increments(model: ModelSpec, grid: TimeGrid, dW, dWp,
                             path_indices=None) -> PathBundle:
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    dWp = np.atleast_2d(np.asarray(dWp, dtype=float))
    if dW.shape != dWp.shape or dW.shape[1] != grid.n_steps:
        raise InvalidGrid(f"increments of shape {dW.shape} do not match {grid.n_steps} steps")
    P, n = dW.shape
    Y = np.empty((P, n + 1))
    logs = np.zeros((P, n + 1))
    terms = np.empty((P, n))
    Y[:, 0] = model.y0
    sig_cache = np.empty((P, n + 1))
    y = Y[:, 0].copy()
    ls = np.zeros(P)
    for i in range(n):
        t, dt = grid.times[i], grid.dt[i]
        y_next, ls_next, sig = scheme_step(model, t, dt, y, ls, dW[:, i], dWp[:, i])
        sig = np.broadcast_to(sig, (P,))
        if np.any(np.abs(sig) < model.sigma_floor):
            raise DegenerateVolatility(
                f"|sigma| below floor {model.sigma_floor:g} at step {i} (t={t:g})")
        sig_cache[:, i] = sig
        terms[:, i] = ls_next - ls
        Y[:, i + 1] = y_next
        logs[:, i + 1] = ls_next
        y, ls = y_next, ls_next
    S = model.x0 * np.exp(logs)
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(Y))):
        raise NonFinite("simulated state is not finite; coefficients blow up at this resolution")
    sig_cache[:, n] = np.broadcast_to(model.sigma(grid.times[n], Y[:, n], 0), (P,))
    bundle = PathBundle(model, grid, dW, dWp, Y, S, terms,
                        None if path_indices is None else np.asarray(path_indices))
    bundle._sig[0] = sig_cache
    return bundle


def simulate_paths(model: ModelSpec, grid: TimeGrid, seed: int, path_indices,
                   antithetic: bool = False) -> PathBundle:
    dW, dWp = draw_increment_block(seed, path_indices, grid)
    if antithetic:
        dW, dWp = -dW, -dWp
    return simulate_from_increments(model, grid, dW, dWp, path_indices)


def simulate_path(model: ModelSpec, grid: TimeGrid, stream: RngStream,
                  antithetic: bool = False) -> PathBundle:
    """Single trajectory for ``stream`` (a bundle holding one path)."""
    return simulate_paths(model, grid, stream.seed, [stream.path_index], antithetic)


def write_paths_csv(bundle: PathBundle, fh) -> None:
    """Debug dump: one row per (path, step) with the increment taken from that node."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_index", "step", "t", "dW", "dWp", "Y", "S"])
    idx = bundle.path_indices if bundle.path_indices is not None else range(bundle.n_paths)
    n = bundle.grid.n_steps
    for row, p in enumerate(idx):
        for i in range(n + 1):
            dw = repr(float(bundle.dW[row, i])) if i < n else ""
            dwp = repr(float(bundle.dWp[row, i])) if i < n else ""
            w.writerow([int(p), i, repr(float(bundle.grid.times[i])), dw, dwp,
                        repr(float(bundle.Y[row, i])), repr(float(bundle.S[row, i]))])
