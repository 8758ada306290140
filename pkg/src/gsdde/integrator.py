"""Explicit Euler integration of one delayed path per scenario.

Update rule per step, state x, delayed state y = X(t - delta(t)):

    X(t_i) = X(t_{i-1}) + f(x, y, t_{i-1}) * dt
                        + g(x, y, t_{i-1}) * sigma_k^2 * dt
                        + h(t_{i-1}) * zeta_i

The g term uses the per-scenario deterministic quadratic-variation increment
sigma_k^2 * dt (under a constant-sigma scenario the quadratic variation is
exactly sigma^2 t).  Non-finite updates flag the path as exploded at that
step; the remainder is NaN-filled and excluded downstream.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ValidatedModel
from .scenario import GRID_ALIGN_TOL, ScenarioEnsemble, TimeGrid


class IntegrationError(Exception):
    pass


class AllPathsExploded(IntegrationError):
    pass


class LookbackBeforeHistory(IntegrationError):
    pass


_MODE_GRID = 0  # delayed time hits a grid point: read stored value
_MODE_HISTORY = 1  # delayed time is <= 0: evaluate eta directly
_MODE_INTERP = 2  # strictly between grid points: linear interpolation


@dataclass
class Path:
    """One integrated trajectory on the extended grid [-tau, horizon]."""

    values: np.ndarray  # length history_steps + steps + 1
    level_index: int
    sample_index: int
    exploded_at: int | None = None  # first step index (1..N) with a bad update
    interpolation_count: int = 0

    @property
    def ok(self):
        return self.exploded_at is None


@dataclass
class PathEnsemble:
    paths: list  # [m][n] of Path
    time: TimeGrid
    model: ValidatedModel
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self):
        return len(self.paths)

    @property
    def n(self):
        return len(self.paths[0]) if self.paths else 0

    def values_array(self):
        """Stacked values, shape (m, n, history_steps + steps + 1)."""
        if self._values is None:
            self._values = np.stack(
                [np.stack([p.values for p in row]) for row in self.paths]
            )
        return self._values

    def exploded_steps(self):
        """Explosion step per path (steps+1 where the path never exploded)."""
        never = self.time.steps + 1
        return np.array(
            [[p.exploded_at if p.exploded_at is not None else never for p in row]
             for row in self.paths],
            dtype=np.int64,
        )

    def exploded_total(self):
        return int(sum(1 for row in self.paths for p in row if not p.ok))


def _classify_lookback(s, grid: TimeGrid):
    """How to realize X(s): (mode, grid index into the extended array, weight)."""
    if s <= 0.0:
        if s < -grid.tau - GRID_ALIGN_TOL * max(1.0, grid.tau):
            raise LookbackBeforeHistory(
                f"lookback time {s} precedes history start -tau={-grid.tau}"
            )
        return _MODE_HISTORY, 0, 0.0
    u = s / grid.dt
    r = round(u)
    if abs(u - r) <= GRID_ALIGN_TOL * max(1.0, abs(u)):
        return _MODE_GRID, grid.history_steps + int(r), 0.0
    i0 = math.floor(u)
    return _MODE_INTERP, grid.history_steps + i0, u - i0


def delayed_state(path_values, grid: TimeGrid, model: ValidatedModel, t, delay):
    """X(t - delay) from stored values; history times use eta(s) exactly,
    off-grid positive times interpolate linearly between bracketing values."""
    s = t - delay
    mode, idx, w = _classify_lookback(s, grid)
    if mode == _MODE_HISTORY:
        return model.history_value(min(s, 0.0))
    if mode == _MODE_GRID:
        return float(path_values[idx])
    return float(path_values[idx]) * (1.0 - w) + float(path_values[idx + 1]) * w


@dataclass(frozen=True)
class _StepTable:
    """Per-(model, grid) precomputation shared by every path.

    For step i (1..N) taken at t = t_{i-1}: the lookback mode, index/weight
    or ready history value, plus h(t_{i-1}) and t_{i-1} themselves.
    """

    modes: list
    indices: list
    weights: list
    hist_values: list
    h_values: list
    step_times: list
    history_values: list  # eta at the extended grid points in [-tau, 0]
    interpolation_count: int

    @staticmethod
    def build(model: ValidatedModel, grid: TimeGrid):
        dt = grid.dt
        n_steps = grid.steps
        hist_steps = grid.history_steps
        modes, indices, weights, hist_vals = [], [], [], []
        h_values, step_times = [], []
        interp = 0
        for i in range(1, n_steps + 1):
            tp = (i - 1) * dt
            d = model.delta(tp)
            mode, idx, w = _classify_lookback(tp - d, grid)
            modes.append(mode)
            indices.append(idx)
            weights.append(w)
            if mode == _MODE_HISTORY:
                hist_vals.append(model.history_value(min(tp - d, 0.0)))
            else:
                hist_vals.append(0.0)
            if mode == _MODE_INTERP:
                interp += 1
            h_values.append(model.h(tp))
            step_times.append(tp)
        history_values = [model.eta(i * dt) for i in range(-hist_steps, 1)]
        return _StepTable(
            modes=modes,
            indices=indices,
            weights=weights,
            hist_values=hist_vals,
            h_values=h_values,
            step_times=step_times,
            history_values=history_values,
            interpolation_count=interp,
        )


def integrate_path(
    model: ValidatedModel,
    grid: TimeGrid,
    increments,
    sigma_level,
    level_index=0,
    sample_index=0,
    table=None,
):
    """Integrate one path from its pre-generated increments at one volatility level."""
    tab = table if table is not None else _StepTable.build(model, grid)
    hist_steps = grid.history_steps
    n_steps = grid.steps
    dt = grid.dt
    xs = list(tab.history_values)
    xs.extend([0.0] * n_steps)

    f = model.f
    g = None if model.g_is_zero else model.g
    qv = sigma_level * sigma_level * dt
    z = [float(v) for v in increments]
    if len(z) != n_steps:
        raise IntegrationError(f"expected {n_steps} increments, got {len(z)}")

    modes = tab.modes
    indices = tab.indices
    weights = tab.weights
    hist_vals = tab.hist_values
    h_vals = tab.h_values
    times = tab.step_times
    isfinite = math.isfinite

    exploded_at = None
    for i in range(1, n_steps + 1):
        s = i - 1
        x = xs[hist_steps + s]
        mode = modes[s]
        if mode == _MODE_GRID:
            y = xs[indices[s]]
        elif mode == _MODE_HISTORY:
            y = hist_vals[s]
        else:
            a = indices[s]
            w = weights[s]
            y = xs[a] * (1.0 - w) + xs[a + 1] * w
        tp = times[s]
        try:
            if g is None:
                xn = x + f(x, y, tp) * dt + h_vals[s] * z[s]
            else:
                xn = x + f(x, y, tp) * dt + g(x, y, tp) * qv + h_vals[s] * z[s]
        except (ArithmeticError, ValueError):
            exploded_at = i
            break
        if not isfinite(xn):
            exploded_at = i
            break
        xs[hist_steps + i] = xn

    values = np.array(xs, dtype=np.float64)
    if exploded_at is not None:
        values[hist_steps + exploded_at :] = math.nan
    return Path(
        values=values,
        level_index=level_index,
        sample_index=sample_index,
        exploded_at=exploded_at,
        interpolation_count=tab.interpolation_count,
    )


def default_threads():
    raw = os.environ.get("GSDDE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise IntegrationError(f"GSDDE_THREADS must be an integer, got {raw!r}") from None


def integrate_ensemble(model: ValidatedModel, scenario: ScenarioEnsemble, threads=None):
    """Integrate every (level, sample) path of the ensemble.

    Paths are fully independent (pre-generated increments, shared read-only
    tables), so the result does not depend on execution order or thread count.
    Fails only when every path explodes.
    """
    grid = scenario.time
    tab = _StepTable.build(model, grid)
    levels = scenario.vol_grid.levels
    m, n = scenario.m, scenario.n
    if threads is None:
        threads = default_threads()

    def run(k, j):
        return integrate_path(
            model, grid, scenario.increments[k, j], levels[k], k, j, tab
        )

    paths = [[None] * n for _ in range(m)]
    if threads <= 1:
        for k in range(m):
            for j in range(n):
                paths[k][j] = run(k, j)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {(k, j): pool.submit(run, k, j) for k in range(m) for j in range(n)}
        for (k, j), fut in futures.items():
            paths[k][j] = fut.result()

    ensemble = PathEnsemble(paths=paths, time=grid, model=model)
    if ensemble.exploded_total() == m * n:
        raise AllPathsExploded(f"all {m * n} paths exploded")
    return ensemble


def write_paths_csv(ensemble: PathEnsemble, fh):
    """Dump every path over the extended grid: columns t, k, j, x."""
    times = ensemble.time.extended_times()
    fh.write("t,k,j,x\n")
    for k, row in enumerate(ensemble.paths):
        for j, path in enumerate(row):
            for t, x in zip(times, path.values):
                fh.write(f"{float(t)!r},{k},{j},{float(x)!r}\n")
