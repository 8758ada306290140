"""Built-in models, Lyapunov candidates and named experiment presets.

``example41`` is the cubic-drift benchmark f = -x^3 - y with exponentially
decaying noise h(t) = e^{-t}/2 on the variance band [0.5, 1]; ``linear-ou``
is a linear mean-reverting model with constant noise and a degenerate band,
used as a classical Monte Carlo cross-check.
"""

from __future__ import annotations

import math

from . import exprlang
from .model import DelaySpec, GSDDEModel, InitialHistory, VolatilityBounds
from .stability import LyapunovSpec


def _e(text):
    return exprlang.parse_expr(text)


def example41(delta=0.01, tau=None):
    """The benchmark model; ``delta`` is the constant delay, tau defaults to it."""
    delta = float(delta)
    if tau is None:
        tau = delta
    model = GSDDEModel(
        drift_f=_e("-x^3 - y"),
        qv_coeff_g=_e("0"),
        noise_h=_e("0.5*exp(-t)"),
        delay=DelaySpec(tau=tau, delta=_e(repr(delta)), delta_dot_bound=0.1),
        vol=VolatilityBounds(sigma_lower_sq=0.5, sigma_upper_sq=1.0),
        growth_K=1.0,
        growth_q1=3.0,
        growth_q2=0.0,
    )
    history = InitialHistory(eta=_e("2 + sin(u)"))
    return model, history


def linear_ou(tau=0.001):
    """Linear contraction f = -x, unit constant noise, no volatility ambiguity."""
    model = GSDDEModel(
        drift_f=_e("-x"),
        qv_coeff_g=_e("0"),
        noise_h=_e("1"),
        delay=DelaySpec(tau=tau, delta=_e("0"), delta_dot_bound=0.0),
        vol=VolatilityBounds(sigma_lower_sq=1.0, sigma_upper_sq=1.0),
        growth_K=1.0,
        growth_q1=1.0,
        growth_q2=0.0,
    )
    history = InitialHistory(eta=_e("1"))
    return model, history


MODELS = {"example41": example41, "linear-ou": linear_ou}


def get_model(name, **kwargs):
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    return factory(**kwargs)


def example41_lyapunov():
    """Candidates and constants under which the benchmark passes every checker.

    c1 = 585 dominates sup_x (1 + 4x^4 + 8x^6 - x^8) = 293 + 88*sqrt(11)
    ~= 584.863.  alpha2 = 0.5 and the 2.5 x^8 coefficient in H are the values
    the dissipation algebra actually supports (alpha2 = 0.05 fails the grid
    check); see the README notes on the benchmark constants.
    """
    return LyapunovSpec(
        U=_e("exp(-t) + x^2 + x^4"),
        U1=_e("0.5*exp(-t) + 0.1*x^2 + 4*x^4 + 2*x^6"),
        Ubar=_e("x^6"),
        H=_e("1 + 1.5*x^6 + 2.5*x^8"),
        beta1=0.1,
        beta2=0.05,
        beta3=math.inf,
        beta4=1.0,
        alpha1=1.0,
        alpha2=0.5,
        c1=585.0,
        c2=2.0,
        c3=1.0,
        varpi=1.0,
        q1=3.0,
        q2=0.0,
        q=6.0,
        p=4.0,
    )


# Hand-coded derivatives of the benchmark candidates (oracles for the
# finite-difference evaluation).
EXAMPLE41_DERIVATIVES = {
    "U_t": lambda x, t: -math.exp(-t),
    "U_x": lambda x, t: 2.0 * x + 4.0 * x**3,
    "U_xx": lambda x, t: 2.0 + 12.0 * x * x,
    "Ubar_t": lambda x, t: 0.0,
    "Ubar_x": lambda x, t: 6.0 * x**5,
    "Ubar_xx": lambda x, t: 30.0 * x**4,
}


# Named reproduction presets: the benchmark at three delays, one path ensemble
# each.  Verdict thresholds were calibrated on pilot runs with these seeds:
# at delta=2 the solution settles into a sustained oscillation whose lower
# estimate averages ~0.35 over the final fifth of [0, 20] (it sweeps through
# zero crossings), while the stable presets' tails sit below 1e-7, so 0.25
# separates the regimes with wide margins on both sides.
FIGURE_PRESETS = {
    "fig41": {"delta": 0.01, "include_upper": True},
    "fig42": {"delta": 2.0, "include_upper": False},
    "fig43": {"delta": 0.08, "include_upper": True},
}

PRESET_SEED = 42
PRESET_M = 5
PRESET_N = 20
PRESET_STEPS = 20000
PRESET_HORIZON = 20.0
PRESET_P = 1.0
PRESET_WINDOW_FRACTION = 0.2
PRESET_STABLE_RATIO = 0.05
PRESET_UNSTABLE_FLOOR = 0.25
