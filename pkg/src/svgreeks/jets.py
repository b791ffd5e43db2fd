"""Truncated multivariate Taylor arithmetic over numpy arrays.

A :class:`Jet` carries the Taylor coefficients of a quantity in a few small
perturbation variables, ``c[m] = (1/m!) d^m f`` for multi-indices ``m`` in a
downward-closed set fixed by a :class:`JetSpace`.  Coefficients are arrays
(one entry per simulated path, or per seed when used as an oracle) and
``None`` marks a structural zero so constant coefficients cost nothing.

Running the simulation recursion on jets yields exact derivatives of the
discretized system with respect to the seeded directions.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


class JetSpace:
    """Monomial set ``{m : m_i <= max_orders[i], |m| <= max_total}``."""

    def __init__(self, max_orders, max_total=None):
        self.max_orders = tuple(int(o) for o in max_orders)
        self.nvars = len(self.max_orders)
        self.max_total = sum(self.max_orders) if max_total is None else int(max_total)
        monos = [m for m in itertools.product(*(range(o + 1) for o in self.max_orders))
                 if sum(m) <= self.max_total]
        monos.sort(key=lambda m: (sum(m), tuple(-x for x in m)))
        self.monomials = monos
        self.index = {m: i for i, m in enumerate(monos)}
        self.size = len(monos)
        # products: for each target monomial, the index pairs that land on it
        self._mult = [[] for _ in monos]
        for i, a in enumerate(monos):
            for j, b in enumerate(monos):
                m = tuple(x + y for x, y in zip(a, b))
                k = self.index.get(m)
                if k is not None:
                    self._mult[k].append((i, j))
        self.factorials = [math.prod(math.factorial(x) for x in m) for m in monos]

    def unit(self, var: int) -> tuple:
        return tuple(1 if v == var else 0 for v in range(self.nvars))

    def constant(self, value) -> "Jet":
        c = [None] * self.size
        c[0] = value
        return Jet(self, c)

    def variable(self, value, var: int, scale=1.0) -> "Jet":
        """``value + scale * e_var``."""
        c = [None] * self.size
        c[0] = value
        c[self.index[self.unit(var)]] = scale
        return Jet(self, c)

    def __eq__(self, other):
        return isinstance(other, JetSpace) and self.max_orders == other.max_orders \
            and self.max_total == other.max_total

    def __hash__(self):
        return hash((self.max_orders, self.max_total))


@lru_cache(maxsize=None)
def space(max_orders, max_total=None) -> JetSpace:
    return JetSpace(max_orders, max_total)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Jet:
    __slots__ = ("space", "c", "_powers")
    # make ndarray <op> Jet defer to the Jet's reflected operators
    __array_ufunc__ = None

    def __init__(self, space: JetSpace, coeffs):
        self.space = space
        self.c = list(coeffs)
        self._powers = None

    # -- access ---------------------------------------------------------------
    @property
    def value(self):
        return self.c[0]

    def coeff(self, m):
        v = self.c[self.space.index[tuple(m)]]
        return 0.0 if v is None else v

    def derivative(self, m):
        """Partial derivative ``d^m`` (coefficient times m!)."""
        m = tuple(m)
        return self.coeff(m) * self.space.factorials[self.space.index[m]]

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Jet):
            c = list(self.c)
            c[0] = c[0] + other
            return Jet(self.space, c)
        return Jet(self.space, [_add(a, b) for a, b in zip(self.c, other.c)])

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, [None if a is None else -a for a in self.c])

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, [None if a is None else a * other for a in self.c])
        out = []
        for pairs in self.space._mult:
            acc = None
            for i, j in pairs:
                a = self.c[i]
                if a is None:
                    continue
                b = other.c[j]
                if b is None:
                    continue
                acc = a * b if acc is None else acc + a * b
            out.append(acc)
        return Jet(self.space, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if p == 2:
            return self * self
        if isinstance(p, int) and p >= 0:
            out = self.space.constant(1.0)
            for _ in range(p):
                out = out * self
            return out
        raise ValueError("only non-negative integer powers are supported")

    # -- composition ----------------------------------------------------------
    def _delta_powers(self):
        # delta = self - value; powers 1..max_total
        if self._powers is None:
            d = Jet(self.space, [None] + self.c[1:])
            pw = [None, d]
            for _ in range(2, self.space.max_total + 1):
                pw.append(pw[-1] * d)
            self._powers = pw
        return self._powers

    def compose(self, derivs):
        """``phi(self)`` given ``derivs[k] = phi^(k)(self.value)``.

        ``derivs`` must reach the space's total order.
        """
        need = self.space.max_total
        if len(derivs) <= need:
            raise ValueError(f"composition needs {need + 1} derivatives, got {len(derivs)}")
        pw = self._delta_powers()
        out = [None] * self.space.size
        out[0] = derivs[0]
        for k in range(1, need + 1):
            scale = derivs[k] / math.factorial(k)
            for idx, a in enumerate(pw[k].c):
                if a is not None and idx:
                    out[idx] = _add(out[idx], scale * a)
        return Jet(self.space, out)

    def reciprocal(self):
        x0 = self.c[0]
        derivs = [1.0 / x0]
        for k in range(1, self.space.max_total + 1):
            derivs.append(-k * derivs[-1] / x0)
        return self.compose(derivs)

    def exp(self):
        e = np.exp(self.c[0])
        return self.compose([e] * (self.space.max_total + 1))


def apply_surface(fn, t, y):
    """Evaluate a coefficient surface ``fn(t, y, k)`` at a float, array or jet ``y``."""
    if isinstance(y, Jet):
        y0 = y.value
        return y.compose([fn(t, y0, k) for k in range(y.space.max_total + 1)])
    return fn(t, y, 0)


def jet_exp(x):
    return x.exp() if isinstance(x, Jet) else np.exp(x)
