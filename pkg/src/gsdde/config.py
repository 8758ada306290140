"""Flat key=value experiment configs.

One `key = value` pair per line, UTF-8, `#` starts a comment.  Model keys:
f, g, h, eta, delta, tau, delta_dot_bound, sigma_lower_sq, sigma_upper_sq,
K, q1, q2.  Simulation: m, n, steps, horizon, seed.  Estimator: p or
functional.  Stability: U, U1, Ubar, H, beta1..beta4, alpha1, alpha2,
c1..c3, varpi, q, moment_p, grid_x, grid_y, grid_t, tolerance.  Output:
out_dir and the verdict thresholds window_fraction, stable_ratio,
unstable_floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import exprlang
from .model import (
    DelaySpec,
    GSDDEModel,
    InitialHistory,
    ModelError,
    VolatilityBounds,
)
from .stability import DEFAULT_GRID, GridSpec, LyapunovSpec


class ConfigError(Exception):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        if line:
            super().__init__(f"{path}:{line}: {message}")
        else:
            super().__init__(f"{path}: {message}")


MODEL_KEYS = {
    "f", "g", "h", "eta", "delta", "tau", "delta_dot_bound",
    "sigma_lower_sq", "sigma_upper_sq", "K", "q1", "q2",
}
SIMULATION_KEYS = {"m", "n", "steps", "horizon", "seed"}
ESTIMATOR_KEYS = {"p", "functional"}
STABILITY_KEYS = {
    "U", "U1", "Ubar", "H", "beta1", "beta2", "beta3", "beta4",
    "alpha1", "alpha2", "c1", "c2", "c3", "varpi", "q", "moment_p",
    "grid_x", "grid_y", "grid_t", "tolerance",
}
OUTPUT_KEYS = {"out_dir", "window_fraction", "stable_ratio", "unstable_floor"}
KNOWN_KEYS = MODEL_KEYS | SIMULATION_KEYS | ESTIMATOR_KEYS | STABILITY_KEYS | OUTPUT_KEYS

DEFAULT_DT = 1e-3


@dataclass
class VerdictSettings:
    # pilot-calibrated on the benchmark presets; unstable_floor must stay
    # below the lower-tail average of an oscillating solution (zero crossings
    # drag the per-time lower estimate down)
    window_fraction: float = 0.2
    stable_ratio: float = 0.05
    unstable_floor: float = 0.25


@dataclass
class ExperimentConfig:
    path: str
    model: GSDDEModel | None = None
    history: InitialHistory | None = None
    m: int = 5
    n: int = 20
    steps: int | None = None
    horizon: float = 20.0
    seed: int = 0
    p: float = 1.0
    functional_expr: object = None
    lyapunov: LyapunovSpec | None = None
    grid: GridSpec = field(default_factory=lambda: DEFAULT_GRID)
    tolerance: float = 1e-9
    out_dir: str = "."
    verdict: VerdictSettings = field(default_factory=VerdictSettings)

    def resolved_steps(self):
        # default step size 1e-3 when no explicit step count is configured
        if self.steps is not None:
            return self.steps
        return max(1, int(round(self.horizon / DEFAULT_DT)))


def parse_kv_file(path):
    """Key -> (value string, line number); rejects duplicates and unknown keys."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(path, lineno, "expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(path, lineno, "empty key")
            if not value:
                raise ConfigError(path, lineno, f"empty value for {key!r}")
            if key not in KNOWN_KEYS:
                raise ConfigError(path, lineno, f"unknown key {key!r}")
            if key in entries:
                raise ConfigError(path, lineno, f"duplicate key {key!r}")
            entries[key] = (value, lineno)
    return entries


class _Reader:
    def __init__(self, path, entries):
        self.path = path
        self.entries = entries

    def has(self, key):
        return key in self.entries

    def raw(self, key):
        return self.entries[key][0]

    def line(self, key):
        return self.entries[key][1]

    def float_(self, key, default=None):
        if key not in self.entries:
            return default
        value, line = self.entries[key]
        if value.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            return float(value)
        except ValueError:
            raise ConfigError(self.path, line, f"{key}: expected a number, got {value!r}") from None

    def int_(self, key, default=None):
        if key not in self.entries:
            return default
        value, line = self.entries[key]
        try:
            return int(value)
        except ValueError:
            raise ConfigError(self.path, line, f"{key}: expected an integer, got {value!r}") from None

    def expr(self, key, default=None):
        if key not in self.entries:
            return default
        value, line = self.entries[key]
        try:
            return exprlang.parse_expr(value)
        except exprlang.ParseError as exc:
            raise ConfigError(self.path, line, f"{key}: {exc}") from None

    def range_(self, key, default=None):
        if key not in self.entries:
            return default
        value, line = self.entries[key]
        parts = value.split(":")
        if len(parts) != 3:
            raise ConfigError(self.path, line, f"{key}: expected 'lo:hi:step', got {value!r}")
        try:
            lo, hi, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(self.path, line, f"{key}: expected numbers in 'lo:hi:step'") from None
        if not (step > 0 and hi > lo):
            raise ConfigError(self.path, line, f"{key}: need lo < hi and step > 0")
        return (lo, hi, step)


def _build_model(reader: _Reader):
    present = [k for k in MODEL_KEYS if reader.has(k)]
    if not present:
        return None, None
    required = ["f", "h", "eta", "delta", "tau", "delta_dot_bound",
                "sigma_lower_sq", "sigma_upper_sq"]
    missing = [k for k in required if not reader.has(k)]
    if missing:
        raise ConfigError(
            reader.path, reader.line(present[0]),
            f"model section incomplete, missing: {', '.join(missing)}",
        )
    try:
        vol = VolatilityBounds(
            sigma_lower_sq=reader.float_("sigma_lower_sq"),
            sigma_upper_sq=reader.float_("sigma_upper_sq"),
        )
        delay = DelaySpec(
            tau=reader.float_("tau"),
            delta=reader.expr("delta"),
            delta_dot_bound=reader.float_("delta_dot_bound"),
        )
        model = GSDDEModel(
            drift_f=reader.expr("f"),
            qv_coeff_g=reader.expr("g", exprlang.parse_expr("0")),
            noise_h=reader.expr("h"),
            delay=delay,
            vol=vol,
            growth_K=reader.float_("K"),
            growth_q1=reader.float_("q1"),
            growth_q2=reader.float_("q2"),
        )
        history = InitialHistory(eta=reader.expr("eta"))
    except ModelError as exc:
        raise ConfigError(reader.path, 0, f"invalid model: {exc}") from None
    return model, history


def _build_lyapunov(reader: _Reader, model):
    keys = ["U", "U1", "Ubar", "H", "beta1", "beta2", "beta3", "beta4",
            "alpha1", "alpha2", "c1", "c2", "c3", "varpi", "q", "moment_p"]
    if not any(reader.has(k) for k in keys):
        return None
    beta3 = reader.float_("beta3")
    if beta3 is None and model is not None and model.g_is_zero:
        beta3 = math.inf  # the qv term vanishes, so its weight is immaterial
    return LyapunovSpec(
        U=reader.expr("U"),
        U1=reader.expr("U1"),
        Ubar=reader.expr("Ubar"),
        H=reader.expr("H"),
        beta1=reader.float_("beta1"),
        beta2=reader.float_("beta2"),
        beta3=beta3,
        beta4=reader.float_("beta4"),
        alpha1=reader.float_("alpha1"),
        alpha2=reader.float_("alpha2"),
        c1=reader.float_("c1"),
        c2=reader.float_("c2"),
        c3=reader.float_("c3"),
        varpi=reader.float_("varpi"),
        q1=reader.float_("q1", model.growth_q1 if model else None),
        q2=reader.float_("q2", model.growth_q2 if model else None),
        q=reader.float_("q"),
        p=reader.float_("moment_p"),
    )


def load_config(path):
    entries = parse_kv_file(path)
    reader = _Reader(path, entries)
    model, history = _build_model(reader)

    seed = reader.int_("seed", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError(path, reader.line("seed"), "seed must fit in 64 bits")
    m = reader.int_("m", 5)
    n = reader.int_("n", 20)
    if m < 1 or n < 1:
        key = "m" if m < 1 else "n"
        raise ConfigError(path, reader.line(key), f"{key} must be >= 1")

    functional = None
    if reader.has("functional"):
        if reader.has("p"):
            raise ConfigError(path, reader.line("functional"),
                              "give either 'functional' or 'p', not both")
        functional = reader.expr("functional")
        extra = exprlang.free_variables(functional) - {"x"}
        if extra:
            raise ConfigError(path, reader.line("functional"),
                              f"functional may depend on x only, uses {sorted(extra)}")

    grid = GridSpec(
        x=reader.range_("grid_x", DEFAULT_GRID.x),
        y=reader.range_("grid_y", None),
        t=reader.range_("grid_t", DEFAULT_GRID.t),
    )

    defaults = VerdictSettings()
    verdict = VerdictSettings(
        window_fraction=reader.float_("window_fraction", defaults.window_fraction),
        stable_ratio=reader.float_("stable_ratio", defaults.stable_ratio),
        unstable_floor=reader.float_("unstable_floor", defaults.unstable_floor),
    )

    return ExperimentConfig(
        path=path,
        model=model,
        history=history,
        m=m,
        n=n,
        steps=reader.int_("steps"),
        horizon=reader.float_("horizon", 20.0),
        seed=seed,
        p=reader.float_("p", 1.0),
        functional_expr=functional,
        lyapunov=_build_lyapunov(reader, model),
        grid=grid,
        tolerance=reader.float_("tolerance", 1e-9),
        out_dir=reader.raw("out_dir") if reader.has("out_dir") else ".",
        verdict=verdict,
    )


def require_keys(cfg: ExperimentConfig, pairs):
    """Raise a ConfigError naming the config keys whose values are missing."""
    missing = [key for key, value in pairs if value is None]
    if missing:
        raise ConfigError(cfg.path, 0, f"missing required keys: {', '.join(missing)}")
