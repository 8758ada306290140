"""Scenario-ensemble simulation and stability verification for highly
nonlinear stochastic delay equations driven by uncertain volatility.

The package generates volatility-scenario ensembles, integrates delayed
paths with an explicit Euler scheme, estimates upper/lower expectations with
the max-mean/min-mean scheme, computes the closed-form admissible delay
bound and numerically checks the Lyapunov-type assumptions behind it.
"""

__version__ = "0.1.0"

from .exprlang import eval_expr, format_expr, parse_expr, partial_derivative
from .integrator import Path, PathEnsemble, delayed_state, integrate_ensemble, integrate_path
from .model import (
    DelaySpec,
    GSDDEModel,
    InitialHistory,
    ValidatedModel,
    VolatilityBounds,
    validate_model,
)
from .scenario import (
    ScenarioEnsemble,
    TimeGrid,
    VolatilityGrid,
    align_steps,
    build_volatility_grid,
    generate_ensemble,
    qv_increment,
)
from .stability import (
    CheckReport,
    GridSpec,
    LyapunovSpec,
    bdg_constant,
    check_delay_lipschitz,
    check_khasminskii,
    check_polynomial_growth,
    check_stability_assumption,
    delay_bound,
    g_generator,
    lyapunov_operator_LbarU,
    lyapunov_operator_LU,
    moment_exponent_condition,
)
from .sublinear import (
    AbsPower,
    EstimateSeries,
    ExprFunctional,
    capacity_lower,
    capacity_upper,
    estimate_series,
    lower_expectation,
    upper_expectation,
)
