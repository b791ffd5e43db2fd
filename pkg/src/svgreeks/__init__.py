"""Monte Carlo Greeks under two-factor stochastic volatility via Malliavin weights."""
from .closed_form import bs_closed_form
from .errors import (ConfigError, DegenerateVolatility, InsufficientRows, InvalidGrid, NonFinite,
                     SingularWeight, SVGreeksError, UnsupportedCombination, UnsupportedOrder)
from .greeks import (GreekEstimate, Payoff, delta_weight, estimate, gamma_weight,
                     generic_ibp_weight, payoff_eval, rho_vega_weight, tangent_sensitivity)
from .malliavin import (AnalyticTables, MalliavinCache, WeightKernel, analytic_pieces, compute_d2G,
                        compute_dG, compute_G, discrete_tangent, du_functionals, first_variation,
                        skorohod_delta, tangent_matrix)
from .model import (ModelSpec, bs_constant, load_model, model_from_dict, q_drift_y,
                    q_drift_y_partial, scott_exp, validate_model)
from .paths import (PathBundle, RngStream, TimeGrid, build_grid, draw_increments, simulate_path,
                    simulate_paths)

__version__ = "0.1.0"
