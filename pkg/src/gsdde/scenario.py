"""Volatility grids and seeded ensembles of Gaussian increments.

The uncertainty band [sigma_lower, sigma_upper] is discretized into m
equally spaced volatility levels; each scenario path draws its N Gaussian
increments at one fixed level.  Streams are keyed by (seed, k, j) so the
ensemble is reproducible and independent of generation order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import VolatilityBounds


class ScenarioError(Exception):
    pass


class ZeroLevels(ScenarioError):
    pass


class DegenerateGridRequest(ScenarioError):
    pass


class IndexOutOfRange(ScenarioError):
    pass


class GridAlignmentError(ScenarioError):
    pass


# Relative slack when deciding whether a time sits on the grid.
GRID_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*dt on [0, horizon], extended back to -tau.

    tau must be an integer multiple of dt so the history boundary falls on
    a grid point (see :func:`align_steps`).
    """

    horizon: float
    steps: int
    tau: float = 0.0

    def __post_init__(self):
        if self.steps < 1:
            raise GridAlignmentError(f"steps must be >= 1, got {self.steps}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise GridAlignmentError(f"horizon must be positive, got {self.horizon}")
        if self.tau < 0.0:
            raise GridAlignmentError(f"tau must be >= 0, got {self.tau}")
        ratio = self.tau / self.dt
        if abs(ratio - round(ratio)) > GRID_ALIGN_TOL:
            raise GridAlignmentError(
                f"tau={self.tau} is not an integer multiple of dt={self.dt}; "
                f"use align_steps to adjust the step count"
            )

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def history_steps(self):
        return int(round(self.tau / self.dt))

    def times(self):
        """Grid points for t >= 0."""
        return self.dt * np.arange(0, self.steps + 1)

    def history_times(self):
        """Grid points on [-tau, 0]."""
        return self.dt * np.arange(-self.history_steps, 1)

    def extended_times(self):
        return self.dt * np.arange(-self.history_steps, self.steps + 1)


def align_steps(horizon, tau, steps):
    """Smallest step count >= ``steps`` making tau an integer multiple of dt."""
    if tau == 0.0:
        return steps
    ratio = Fraction(tau).limit_denominator(10**9) / Fraction(horizon).limit_denominator(10**9)
    if ratio <= 0:
        raise GridAlignmentError(f"tau={tau} and horizon={horizon} must be positive")
    base = ratio.denominator
    if base > 10**7:
        raise GridAlignmentError(
            f"cannot align tau={tau} to horizon={horizon}: required multiple {base} too large"
        )
    return ((steps + base - 1) // base) * base


@dataclass(frozen=True)
class VolatilityGrid:
    """Equally spaced volatility levels (standard-deviation units)."""

    levels: tuple

    @property
    def m(self):
        return len(self.levels)

    @property
    def sigma_max(self):
        return self.levels[-1]


def build_volatility_grid(vol: VolatilityBounds, m):
    """m equal-step levels from sigma_lower to sigma_upper.

    m = 1 is only allowed for a degenerate band (sigma_lower == sigma_upper);
    conversely a degenerate band with m > 1 yields m copies of the single level.
    """
    if m < 1:
        raise ZeroLevels(f"need at least one level, got m={m}")
    lo, hi = vol.sigma_lower, vol.sigma_upper
    if m == 1:
        if not vol.degenerate:
            raise DegenerateGridRequest(
                f"m=1 needs sigma_lower == sigma_upper, got [{lo}, {hi}]"
            )
        return VolatilityGrid(levels=(lo,))
    return VolatilityGrid(levels=tuple(float(v) for v in np.linspace(lo, hi, m)))


def qv_increment(grid: VolatilityGrid, k, dt):
    """Per-step quadratic-variation increment (sigma_k)^2 * dt for level k (0-based)."""
    if not 0 <= k < grid.m:
        raise IndexOutOfRange(f"level index {k} outside 0..{grid.m - 1}")
    return grid.levels[k] ** 2 * dt


@dataclass(frozen=True)
class ScenarioEnsemble:
    """Increments zeta[k][j][i] ~ Normal(0, (sigma_k)^2 * dt), streams keyed by (seed, k, j)."""

    vol_grid: VolatilityGrid
    time: TimeGrid
    seed: int
    increments: np.ndarray  # shape (m, n, N)

    @property
    def m(self):
        return self.increments.shape[0]

    @property
    def n(self):
        return self.increments.shape[1]


def generate_ensemble(grid: VolatilityGrid, n, time: TimeGrid, seed):
    """Draw the (m, n, N) increment array.

    Each (k, j) stream is an independent PCG64 generator keyed by hashing
    (seed, k, j) through numpy's SeedSequence, so regeneration is bit-exact
    and independent of iteration order or threading.  Normals come from
    numpy's ziggurat sampler.
    """
    if n < 1:
        raise ScenarioError(f"need n >= 1 samples per level, got {n}")
    if not 0 <= int(seed) < 2**64:
        raise ScenarioError(f"seed must fit in 64 bits, got {seed}")
    m = grid.m
    steps = time.steps
    dt = time.dt
    out = np.empty((m, n, steps), dtype=np.float64)
    for k in range(m):
        scale = grid.levels[k] * math.sqrt(dt)
        for j in range(n):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed), spawn_key=(k, j))
            )
            out[k, j, :] = rng.standard_normal(steps) * scale
    out.setflags(write=False)
    return ScenarioEnsemble(vol_grid=grid, time=time, seed=int(seed), increments=out)


# ---------------------------------------------------------------------------
# Binary dump: little-endian header ("GSDE", version u32, m, n, N u32, dt f64,
# seed u64) followed by float64 increments in (k, j, i) row-major order.

ENSEMBLE_MAGIC = b"GSDE"
ENSEMBLE_VERSION = 1
_HEADER = struct.Struct("<4sIIIIdQ")


def save_ensemble(path, ensemble: ScenarioEnsemble):
    m, n = ensemble.m, ensemble.n
    steps = ensemble.time.steps
    header = _HEADER.pack(
        ENSEMBLE_MAGIC, ENSEMBLE_VERSION, m, n, steps, ensemble.time.dt, ensemble.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.increments, dtype="<f8").tobytes())


def load_ensemble(path):
    """Read a dump; returns (meta dict, increments array of shape (m, n, N))."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ScenarioError("truncated ensemble file")
        magic, version, m, n, steps, dt, seed = _HEADER.unpack(raw)
        if magic != ENSEMBLE_MAGIC:
            raise ScenarioError(f"bad magic {magic!r}")
        if version != ENSEMBLE_VERSION:
            raise ScenarioError(f"unsupported version {version}")
        body = fh.read()
    expected = m * n * steps * 8
    if len(body) != expected:
        raise ScenarioError(f"expected {expected} payload bytes, got {len(body)}")
    incs = np.frombuffer(body, dtype="<f8").reshape(m, n, steps).copy()
    incs.setflags(write=False)
    meta = {"m": m, "n": n, "steps": steps, "dt": dt, "seed": seed}
    return meta, incs
