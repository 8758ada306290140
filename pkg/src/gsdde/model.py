"""Domain types for a scalar delay equation under volatility uncertainty.

A model bundles the drift f(x, y, t) (y is the delayed state), the
quadratic-variation coefficient g(x, y, t), the deterministic noise envelope
h(t), a variable delay delta(t) bounded by tau, the volatility band
[sigma_lower^2, sigma_upper^2] and declared polynomial-growth constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exprlang
from .exprlang import Expr, Num


class ModelError(Exception):
    """Base class for model validation failures."""


class NonPositiveTau(ModelError):
    pass


class VolatilityOrderViolation(ModelError):
    pass


class DelayOutOfRange(ModelError):
    pass


class DeltaDotBoundNotLessThanOne(ModelError):
    pass


class NonDeterministicH(ModelError):
    pass


class InvalidCoefficient(ModelError):
    """Coefficient uses variables it must not, or the history is not finite."""


class DeltaDerivativeExceedsBound(ModelError):
    """Finite differences of delta(t) exceed the declared bound."""


# Tolerance for spot-checking the declared bound on d(delta)/dt.
_DELTA_DOT_TOL = 1e-6


@dataclass(frozen=True)
class VolatilityBounds:
    """Variance band: 0 < sigma_lower_sq <= sigma_upper_sq < inf."""

    sigma_lower_sq: float
    sigma_upper_sq: float

    def __post_init__(self):
        lo, hi = self.sigma_lower_sq, self.sigma_upper_sq
        if not (lo > 0.0 and math.isfinite(hi)):
            raise VolatilityOrderViolation(
                f"need 0 < sigma_lower_sq and finite sigma_upper_sq, got [{lo}, {hi}]"
            )
        if lo > hi:
            raise VolatilityOrderViolation(
                f"sigma_lower_sq={lo} exceeds sigma_upper_sq={hi}"
            )

    @property
    def sigma_lower(self):
        return math.sqrt(self.sigma_lower_sq)

    @property
    def sigma_upper(self):
        return math.sqrt(self.sigma_upper_sq)

    @property
    def degenerate(self):
        return self.sigma_lower_sq == self.sigma_upper_sq


@dataclass(frozen=True)
class DelaySpec:
    """Delay horizon tau, the delay expression delta(t) and the bound on its slope."""

    tau: float
    delta: Expr
    delta_dot_bound: float

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise NonPositiveTau(f"tau must be positive and finite, got {self.tau}")
        if not (self.delta_dot_bound < 1.0):
            raise DeltaDotBoundNotLessThanOne(
                f"delta_dot_bound must be < 1, got {self.delta_dot_bound}"
            )
        extra = exprlang.free_variables(self.delta) - {"t"}
        if extra:
            raise InvalidCoefficient(f"delta(t) must depend on t only, uses {sorted(extra)}")


@dataclass(frozen=True)
class GSDDEModel:
    drift_f: Expr
    qv_coeff_g: Expr
    noise_h: Expr
    delay: DelaySpec
    vol: VolatilityBounds
    growth_K: float | None = None
    growth_q1: float | None = None
    growth_q2: float | None = None

    def __post_init__(self):
        bad_h = exprlang.free_variables(self.noise_h) - {"t"}
        if bad_h:
            raise NonDeterministicH(
                f"h must be deterministic (t only), uses {sorted(bad_h)}"
            )
        for name, e in (("f", self.drift_f), ("g", self.qv_coeff_g)):
            extra = exprlang.free_variables(e) - {"x", "y", "t"}
            if extra:
                raise InvalidCoefficient(
                    f"{name} may depend on x, y, t only, uses {sorted(extra)}"
                )

    @property
    def g_is_zero(self):
        g = self.qv_coeff_g
        return isinstance(g, Num) and g.value == 0.0


@dataclass(frozen=True)
class InitialHistory:
    """Deterministic initial segment eta(u) on [-tau, 0]."""

    eta: Expr

    def __post_init__(self):
        extra = exprlang.free_variables(self.eta) - {"u"}
        if extra:
            raise InvalidCoefficient(f"eta(u) must depend on u only, uses {sorted(extra)}")


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    """A model whose invariants were checked, with compiled coefficients.

    Immutable after construction; safe to share across threads read-only.
    """

    model: GSDDEModel
    history: InitialHistory
    f: object  # callable (x, y, t)
    g: object  # callable (x, y, t)
    h: object  # callable (t,)
    delta: object  # callable (t,)
    eta: object  # callable (u,)
    g_is_zero: bool

    @property
    def tau(self):
        return self.model.delay.tau

    @property
    def delta_dot_bound(self):
        return self.model.delay.delta_dot_bound

    @property
    def vol(self):
        return self.model.vol

    def history_value(self, s):
        """eta(s) on [-tau, 0]; frozen at eta(-tau) on [-2*tau, -tau)."""
        tau = self.tau
        if s >= -tau:
            if s > 0.0:
                raise ValueError(f"history queried at positive time {s}")
            return self.eta(s)
        if s >= -2.0 * tau:
            return self.eta(-tau)
        raise ValueError(f"history undefined before -2*tau, got {s}")


def validate_model(model, history, grid=None):
    """Check all model invariants and return a :class:`ValidatedModel`.

    ``grid`` (a scenario.TimeGrid) supplies the sample points for the
    delta(t) range and slope spot-checks; without one a probe grid over
    [0, max(1, 10*tau)] is used.  Idempotent: passing a ValidatedModel
    returns it unchanged.
    """
    if isinstance(model, ValidatedModel):
        return model
    if not isinstance(model, GSDDEModel):
        raise TypeError(f"expected GSDDEModel, got {type(model).__name__}")
    if not isinstance(history, InitialHistory):
        raise TypeError(f"expected InitialHistory, got {type(history).__name__}")

    tau = model.delay.tau
    f = exprlang.compile_expr(model.drift_f, ("x", "y", "t"))
    g = exprlang.compile_expr(model.qv_coeff_g, ("x", "y", "t"))
    h = exprlang.compile_expr(model.noise_h, ("t",))
    delta = exprlang.compile_expr(model.delay.delta, ("t",))
    eta = exprlang.compile_expr(history.eta, ("u",))

    if grid is not None:
        times = np.asarray(grid.times(), dtype=float)
        spacing = grid.dt
        hist_samples = np.asarray(grid.history_times(), dtype=float)
    else:
        horizon = max(1.0, 10.0 * tau)
        times = np.linspace(0.0, horizon, 1001)
        spacing = times[1] - times[0]
        hist_samples = np.linspace(-tau, 0.0, 101)

    tol = 1e-12 * max(1.0, tau)
    deltas = []
    for t in times:
        d = delta(float(t))
        if not math.isfinite(d) or d < -tol or d > tau + tol:
            raise DelayOutOfRange(
                f"delta({float(t)}) = {d} outside [0, tau={tau}]"
            )
        deltas.append(d)

    # Spot-check the declared slope bound by centered differences on the grid.
    bound = model.delay.delta_dot_bound
    for i in range(1, len(deltas) - 1):
        slope = (deltas[i + 1] - deltas[i - 1]) / (2.0 * spacing)
        if slope > bound + _DELTA_DOT_TOL:
            raise DeltaDerivativeExceedsBound(
                f"d(delta)/dt ~ {slope} at t={float(times[i])} exceeds declared "
                f"bound {bound}"
            )

    for s in hist_samples:
        v = eta(float(s))
        if not math.isfinite(v):
            raise InvalidCoefficient(f"eta({float(s)}) is not finite")

    return ValidatedModel(
        model=model,
        history=history,
        f=f,
        g=g,
        h=h,
        delta=delta,
        eta=eta,
        g_is_zero=model.g_is_zero,
    )
