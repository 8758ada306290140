"""Max-mean / min-mean estimation of upper and lower expectations.

Samples are organized as n groups of m volatility levels: group j holds one
draw per level.  The upper expectation estimate of phi is

    max over j of  mean over k of  phi(value[k][j])

and the lower estimate replaces max by min.  Group means use exactly rounded
summation (math.fsum), which keeps the estimator's algebraic properties
(monotonicity, constant preservation, duality) exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exprlang
from .integrator import AllPathsExploded, PathEnsemble


class EstimateError(Exception):
    pass


class EmptyEnsemble(EstimateError):
    pass


class ExcessiveExplosions(EstimateError):
    """More than half of a sample group exploded: the group mean is meaningless."""


@dataclass(frozen=True)
class AbsPower:
    """phi(x) = |x|^p."""

    p: float = 1.0

    @property
    def description(self):
        return f"abs(x)^{self.p:g}"

    def __call__(self, x):
        return abs(x) ** self.p

    def apply_array(self, arr):
        return np.abs(arr) ** self.p


@dataclass(frozen=True)
class ExprFunctional:
    """phi given as an expression in x."""

    expr: exprlang.Expr

    def __post_init__(self):
        extra = exprlang.free_variables(self.expr) - {"x"}
        if extra:
            raise ValueError(f"functional may depend on x only, uses {sorted(extra)}")

    @property
    def description(self):
        return exprlang.format_expr(self.expr)

    def __call__(self, x):
        return exprlang.eval_expr(self.expr, {"x": x})

    def apply_array(self, arr):
        return eval_array_checked(self.expr, arr)


def eval_array_checked(expr, arr):
    return exprlang.eval_expr_array(expr, {"x": np.asarray(arr, dtype=float)})


def _apply(values, functional):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise EmptyEnsemble(f"expected a 2-d [m][n] array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise EmptyEnsemble(f"empty sample array of shape {arr.shape}")
    if functional is None:
        return arr
    if hasattr(functional, "apply_array"):
        return np.asarray(functional.apply_array(arr), dtype=float)
    return np.array([[float(functional(float(v))) for v in row] for row in arr])


def _group_means(applied):
    """Means over the level axis: applied has shape (m, n), result length n."""
    groups = applied.T.tolist()  # [n][m]
    m = applied.shape[0]
    return [math.fsum(group) / m for group in groups]


def upper_expectation(values, functional=None):
    """max over groups of the within-group mean of phi(sample)."""
    return max(_group_means(_apply(values, functional)))


def lower_expectation(values, functional=None):
    """min over groups of the within-group mean of phi(sample)."""
    return min(_group_means(_apply(values, functional)))


def capacity_upper(values):
    """Upper capacity of an event from indicator samples (entries 0 or 1)."""
    return upper_expectation(_check_binary(values))


def capacity_lower(values):
    return lower_expectation(_check_binary(values))


def _check_binary(values):
    arr = np.asarray(values, dtype=float)
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("capacity estimators need indicator samples (0/1)")
    return arr


@dataclass
class EstimateSeries:
    """Per-time upper and lower estimates of phi(X(t)) with exclusion counts."""

    times: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    excluded: np.ndarray
    functional: str

    def __post_init__(self):
        if np.any(self.lower > self.upper):
            raise EstimateError("lower estimate exceeds upper estimate")


def estimate_series(ensemble: PathEnsemble, functional):
    """Apply the max-mean/min-mean estimators at every grid time t >= 0.

    Exploded paths drop out of their group mean from the step they exploded;
    a group that loses more than half its levels aborts the estimate.
    """
    grid = ensemble.time
    hist = grid.history_steps
    n_steps = grid.steps
    m, n = ensemble.m, ensemble.n
    if m == 0 or n == 0:
        raise EmptyEnsemble(f"ensemble has shape ({m}, {n})")

    values = ensemble.values_array()[:, :, hist:]
    if hasattr(functional, "apply_array"):
        with np.errstate(all="ignore"):
            applied = np.asarray(functional.apply_array(values), dtype=float)
    else:
        applied = np.vectorize(functional, otypes=[float])(values)
    # (time, group, level) layout so each group is a contiguous list for fsum
    by_time = np.ascontiguousarray(np.transpose(applied, (2, 1, 0)))

    exploded = ensemble.exploded_steps()  # (m, n), steps+1 means "never"
    any_explosion = bool((exploded <= n_steps).any())

    upper = np.empty(n_steps + 1)
    lower = np.empty(n_steps + 1)
    excluded = np.zeros(n_steps + 1, dtype=np.int64)
    times = grid.times()

    if not any_explosion:
        for i in range(n_steps + 1):
            groups = by_time[i].tolist()
            means = [math.fsum(group) / m for group in groups]
            upper[i] = max(means)
            lower[i] = min(means)
        desc = getattr(functional, "description", repr(functional))
        return EstimateSeries(times, upper, lower, excluded, desc)

    for i in range(n_steps + 1):
        alive = exploded > i  # (m, n) mask
        if not alive.any():
            raise AllPathsExploded(f"all paths excluded by t={float(times[i])}")
        means = []
        dropped = 0
        for j in range(n):
            alive_k = [k for k in range(m) if alive[k, j]]
            dead = m - len(alive_k)
            dropped += dead
            if 2 * dead > m:
                raise ExcessiveExplosions(
                    f"group {j} lost {dead}/{m} paths by t={float(times[i])}"
                )
            row = by_time[i][j]
            means.append(math.fsum(row[k] for k in alive_k) / len(alive_k))
        upper[i] = max(means)
        lower[i] = min(means)
        excluded[i] = dropped

    desc = getattr(functional, "description", repr(functional))
    return EstimateSeries(times, upper, lower, excluded, desc)


def write_series_csv(series: EstimateSeries, fh, include_upper=True, header_lines=()):
    """CSV dump: columns t, upper, lower, excluded_count (upper optional)."""
    for line in header_lines:
        fh.write(f"# {line}\n")
    if include_upper:
        fh.write("t,upper,lower,excluded_count\n")
        for t, u, lo, c in zip(series.times, series.upper, series.lower, series.excluded):
            fh.write(f"{float(t)!r},{float(u)!r},{float(lo)!r},{int(c)}\n")
    else:
        fh.write("t,lower,excluded_count\n")
        for t, lo, c in zip(series.times, series.lower, series.excluded):
            fh.write(f"{float(t)!r},{float(lo)!r},{int(c)}\n")
