"""Time-dependent compositions of Pomeau-Manneville maps: transfer operators,
Monte Carlo central limit experiments and rate calculators."""
__version__ = "0.1.0"

from .maps import apply_map, inverse_branches, iterate, map_derivative
from .observables import Observable, builtin
from .transfer import (Grid, GridDensity, PiecewiseLinear, UlamOperator, build_ulam, cone_check,
                       covariance_along, default_grid, invariant_density, invariant_linear, lag_correlation,
                       mean_along, push_density, transfer_apply)
from .schedules import (FixedSchedule, QdsArray, RandomProcess, finite_markov, fixed_schedule, iid_uniform,
                        linear_tau, mixing_profile, qds_row, sample_omega)
from .ensemble import (EnsembleResult, InitialMeasure, empirical_covariance, simulate_S, simulate_W,
                       simulate_xi)
from .stats import (green_kubo, phi_sigma, rds_sigma_sq, sigma_t_integral, smooth_test_distance,
                    wasserstein1_to_normal)
from .rates import RateSpec, fit_loglog, rate_value, rho, stein_rhs
