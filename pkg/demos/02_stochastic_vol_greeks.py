"""
Greeks under exponential stochastic volatility
==============================================

sigma(t, y) = 0.2 exp(y), with Y an Ornstein-Uhlenbeck-type factor
correlated with the asset (rho = -0.5).  No closed form exists, so the
Malliavin estimates are checked against bump-and-revalue finite
differences with common random numbers, and against pathwise tangents where
the payoff allows it.
"""

# %%
import math

from svgreeks import Payoff, estimate, scott_exp

model = scott_exp(x0=100.0, y0=0.0, sigma_bar=0.2, nu=0.3, rho=-0.5, r=0.05, mu=0.05, b0=-0.2)
call = Payoff("call", 100.0)
digital = Payoff("digital-call", 100.0)
common = dict(n_paths=60_000, n_steps=32)

# %%
# Call Greeks by three estimators.  The Malliavin and FD runs use different
# seeds so the combined stderr is a proper standard error of the difference.
for greek in ("delta", "gamma", "rho", "vega"):
    mall = estimate(model, call, greek, seed=1, **common)
    fd = estimate(model, call, greek, "finite-difference", seed=2, **common)
    z = (mall.value - fd.value) / math.hypot(mall.stderr, fd.stderr)
    line = f"{greek:>6}: malliavin {mall.value:9.5f} +- {mall.stderr:.5f}   " \
           f"FD {fd.value:9.5f} +- {fd.stderr:.5f}   z = {z:+.2f}"
    if greek != "gamma":
        pw = estimate(model, call, greek, "pathwise-tangent", seed=3, **common)
        line += f"   pathwise {pw.value:9.5f}"
    print(line)

# %%
# For the digital the payoff jump makes finite differences noisy; the
# Malliavin weight never differentiates the payoff.
mall = estimate(model, digital, "delta", seed=4, **common)
fd = estimate(model, digital, "delta", "finite-difference", fd_bump=1e-3, seed=4, **common)
print(f"digital delta: malliavin stderr {mall.stderr:.2e} vs FD stderr {fd.stderr:.2e}")
