"""
Malliavin weights in the constant-volatility limit
===================================================

With a flat volatility surface the two-factor model collapses to
Black-Scholes, so every Monte Carlo Greek has a closed form to aim at.
This script estimates price, Delta, Gamma, Rho and Vega of an at-the-money
call and a digital, and prints each estimate next to the exact value.
"""

# %%
# Model and payoffs
from svgreeks import Payoff, bs_constant, estimate

model = bs_constant(x0=100.0, sigma0=0.2, r=0.05)
payoffs = [Payoff("call", 100.0), Payoff("digital-call", 100.0)]

# %%
# Each Malliavin row reuses the same simulated paths (same seed) across Greeks.
# The closed-form rows come from the lognormal formulas.
print(f"{'payoff':>13} {'greek':>6} {'malliavin':>12} {'stderr':>9} {'exact':>10} {'z':>6}")
for payoff in payoffs:
    for greek in ("price", "delta", "gamma", "rho", "vega"):
        mc = estimate(model, payoff, greek, n_paths=100_000, n_steps=16, seed=1)
        exact = estimate(model, payoff, greek, "closed-form").value
        z = (mc.value - exact) / mc.stderr
        print(f"{payoff.kind:>13} {greek:>6} {mc.value:12.6f} {mc.stderr:9.2e} {exact:10.6f} "
              f"{z:6.2f}")

# %%
# The Delta weight here is W_T / (x0 sigma0 T): no path-dependent correction
# survives because the kernel G(t, T) is the constant sigma0.
from svgreeks import build_grid, du_functionals, simulate_paths

paths = simulate_paths(model, build_grid(1.0, 16), seed=1, path_indices=range(5))
cache = du_functionals(paths)
print("I on five paths:", cache.I, "(sigma0 * T = 0.2)")
print("D_u I:", cache.duI)
