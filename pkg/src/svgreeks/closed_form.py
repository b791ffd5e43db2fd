"""Lognormal closed forms used as verification oracles (discounted prices)."""
from __future__ import annotations

import math

from scipy.stats import norm

from .errors import UnsupportedCombination

GREEKS = ("price", "delta", "gamma", "rho", "vega")


def _d1d2(x0, K, r, sigma, T):
    sq = sigma * math.sqrt(T)
    d1 = (math.log(x0 / K) + (r + 0.5 * sigma**2) * T) / sq
    return d1, d1 - sq


def bs_closed_form(x0, K, r, sigma, T, greek, kind="call"):
    if not (sigma > 0 and T > 0):
        raise ValueError("sigma and T must be positive")
    if greek not in GREEKS:
        raise UnsupportedCombination(f"unknown greek {greek!r}")
    disc = math.exp(-r * T)
    if kind == "identity":
        return {"price": x0, "delta": 1.0, "gamma": 0.0, "rho": 0.0, "vega": 0.0}[greek]
    if kind == "constant-one":
        return {"price": disc, "delta": 0.0, "gamma": 0.0, "rho": -T * disc, "vega": 0.0}[greek]
    d1, d2 = _d1d2(x0, K, r, sigma, T)
    sq = sigma * math.sqrt(T)
    pdf1, pdf2 = norm.pdf(d1), norm.pdf(d2)
    if kind == "call":
        return {
            "price": x0 * norm.cdf(d1) - K * disc * norm.cdf(d2),
            "delta": norm.cdf(d1),
            "gamma": pdf1 / (x0 * sq),
            "rho": K * T * disc * norm.cdf(d2),
            "vega": x0 * pdf1 * math.sqrt(T),
        }[greek]
    if kind == "put":
        return {
            "price": K * disc * norm.cdf(-d2) - x0 * norm.cdf(-d1),
            "delta": norm.cdf(d1) - 1.0,
            "gamma": pdf1 / (x0 * sq),
            "rho": -K * T * disc * norm.cdf(-d2),
            "vega": x0 * pdf1 * math.sqrt(T),
        }[greek]
    if kind == "digital-call":
        # cash-or-nothing paying 1
        return {
            "price": disc * norm.cdf(d2),
            "delta": disc * pdf2 / (x0 * sq),
            "gamma": -disc * pdf2 * d1 / (x0**2 * sq**2),
            "rho": disc * (-T * norm.cdf(d2) + pdf2 * math.sqrt(T) / sigma),
            "vega": -disc * pdf2 * d1 / sigma,
        }[greek]
    raise UnsupportedCombination(f"no closed form for payoff {kind!r}")
