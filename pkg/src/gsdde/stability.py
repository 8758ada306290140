"""Closed-form stability constants and numerical assumption checkers.

The generator G(a) = (sigma_upper^2 * a+ - sigma_lower^2 * a-) / 2 encodes the
volatility band wherever a classical sigma^2/2 would appear.  The admissible
delay bound combines the Lyapunov constants beta_1..beta_4 and the
delay-sensitivity constant varpi:

    tau_max = min( sqrt(4 b1 b2 / (3 w^2)),
                   sqrt(4 b1 b3 / (3 w^2 su^2)),
                   4 b1 b4 / (3 w^2 su^2) )

Checkers sweep a box grid and report the worst violation (most positive
LHS - RHS); a passing report is numerical evidence, not a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import exprlang
from .exprlang import DEFAULT_FD_STEP, DomainError, Expr, eval_expr_array
from .model import ValidatedModel, VolatilityBounds


class StabilityError(Exception):
    pass


class NonPositiveP(StabilityError):
    pass


class NonPositiveParameter(StabilityError):
    pass


class InfiniteBeta3WithNonzeroG(StabilityError):
    pass


DEFAULT_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# Closed-form constants


def g_generator(alpha, vol: VolatilityBounds):
    """G(alpha) = (sigma_upper^2 * alpha+ - sigma_lower^2 * alpha-) / 2."""
    return 0.5 * (
        vol.sigma_upper_sq * max(alpha, 0.0) - vol.sigma_lower_sq * max(-alpha, 0.0)
    )


def _g_generator_array(alpha, vol: VolatilityBounds):
    return 0.5 * (
        vol.sigma_upper_sq * np.maximum(alpha, 0.0)
        - vol.sigma_lower_sq * np.maximum(-alpha, 0.0)
    )


def bdg_cp(p):
    """The moment-inequality constant C_p (three branches, discontinuous at 2)."""
    if not p > 0:
        raise NonPositiveP(f"p must be positive, got {p}")
    if p < 2:
        return (32.0 / p) ** (p / 2.0)
    if p == 2:
        return 4.0
    return (p ** (p + 1) / (2.0 * (p - 1) ** (p - 1))) ** (p / 2.0)


def bdg_constant(p, sigma_upper):
    """Burkholder-Davis-Gundy constants (C1, C2) = (su^p, C_p * su^p)."""
    c1 = sigma_upper**p
    return c1, bdg_cp(p) * c1


def delay_bound_terms(beta1, beta2, beta3, beta4, varpi, sigma_upper):
    """The three competing admissible-delay terms (drift, qv, noise)."""
    for name, v in (
        ("beta1", beta1),
        ("beta2", beta2),
        ("beta4", beta4),
        ("varpi", varpi),
        ("sigma_upper", sigma_upper),
    ):
        if not (v > 0 and math.isfinite(v)):
            raise NonPositiveParameter(f"{name} must be positive and finite, got {v}")
    if not beta3 > 0:
        raise NonPositiveParameter(f"beta3 must be positive (or inf), got {beta3}")
    w2 = varpi * varpi
    su2 = sigma_upper * sigma_upper
    t_drift = math.sqrt(4.0 * beta1 * beta2 / (3.0 * w2))
    t_qv = math.inf if math.isinf(beta3) else math.sqrt(4.0 * beta1 * beta3 / (3.0 * w2 * su2))
    t_noise = 4.0 * beta1 * beta4 / (3.0 * w2 * su2)
    return t_drift, t_qv, t_noise


def delay_bound(beta1, beta2, beta3, beta4, varpi, sigma_upper):
    """Largest admissible delay horizon tau_max (min of the three terms)."""
    return min(delay_bound_terms(beta1, beta2, beta3, beta4, varpi, sigma_upper))


def moment_exponent_condition(p, q1, q2, q):
    """p >= 2 and max(p + q1 - 1, p + q2 - 1) <= q."""
    return p >= 2 and max(p + q1 - 1, p + q2 - 1) <= q


# ---------------------------------------------------------------------------
# Lyapunov candidates and check grids


@dataclass(frozen=True)
class LyapunovSpec:
    """Candidate functions and constants for the drift-condition checkers.

    beta3 may be +inf only when the model's g vanishes identically; q
    defaults to 2 * max(q1, q2) when not given.
    """

    U: Expr | None = None
    U1: Expr | None = None
    Ubar: Expr | None = None
    H: Expr | None = None
    beta1: float | None = None
    beta2: float | None = None
    beta3: float | None = None
    beta4: float | None = None
    alpha1: float | None = None
    alpha2: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    varpi: float | None = None
    q1: float | None = None
    q2: float | None = None
    q: float | None = None
    p: float | None = None

    def resolved_q(self):
        if self.q is not None:
            return self.q
        if self.q1 is None or self.q2 is None:
            raise ValueError("q not given and q1/q2 missing")
        return 2.0 * max(self.q1, self.q2)

    def with_(self, **kw):
        return replace(self, **kw)


def _axis(lo, hi, step):
    count = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(count)


@dataclass(frozen=True)
class GridSpec:
    """Box grid (lo, hi, step) per axis; y defaults to the x axis."""

    x: tuple = (-5.0, 5.0, 0.05)
    y: tuple | None = None
    t: tuple = (0.0, 10.0, 0.1)

    def x_values(self):
        return _axis(*self.x)

    def y_values(self):
        return _axis(*(self.y if self.y is not None else self.x))

    def t_values(self):
        return _axis(*self.t)

    def describe(self):
        y = self.y if self.y is not None else self.x
        return {"x": list(self.x), "y": list(y), "t": list(self.t)}


DEFAULT_GRID = GridSpec()


@dataclass
class CheckReport:
    """Outcome of one grid check: satisfied iff max_violation <= tolerance."""

    name: str
    satisfied: bool
    max_violation: float
    witness: dict | None
    grid: dict
    tolerance: float
    detail: str = ""

    def to_json_dict(self):
        def safe(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v

        witness = (
            {k: safe(float(v)) for k, v in self.witness.items()} if self.witness else None
        )
        return {
            "name": self.name,
            "satisfied": self.satisfied,
            "max_violation": safe(self.max_violation),
            "witness": witness,
            "grid": self.grid,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }

    def format_text(self):
        lines = [
            f"check: {self.name}",
            f"  satisfied: {'yes' if self.satisfied else 'NO'}",
            f"  max violation: {self.max_violation:.6g} (tolerance {self.tolerance:g})",
        ]
        if self.witness:
            pieces = " ".join(f"{k}={float(v):.6g}" for k, v in self.witness.items())
            lines.append(f"  witness: {pieces}")
        if self.detail:
            lines.append(f"  detail: {self.detail}")
        g = self.grid
        lines.append(
            "  grid: x {} step {}; y {} step {}; t {} step {}".format(
                g["x"][:2], g["x"][2], g["y"][:2], g["y"][2], g["t"][:2], g["t"][2]
            )
        )
        return "\n".join(lines)


class _Worst:
    """Tracks the most positive violation and its witness across slices."""

    def __init__(self):
        self.value = -math.inf
        self.witness = None
        self.label = ""

    def offer(self, value, witness, label):
        if value > self.value:
            self.value = value
            self.witness = witness
            self.label = label

    def offer_slice(self, arr2d, xs, ys, t, label):
        idx = int(np.argmax(arr2d))
        i, j = np.unravel_index(idx, arr2d.shape)
        self.offer(
            float(arr2d[i, j]), {"x": float(xs[i]), "y": float(ys[j]), "t": t}, label
        )

    def offer_axis(self, arr1d, xs, t, label):
        i = int(np.argmax(arr1d))
        self.offer(float(arr1d[i]), {"x": float(xs[i]), "t": t}, label)


def _require(spec_or_model, pairs):
    missing = [name for name, v in pairs if v is None]
    if missing:
        raise ValueError(f"missing constants/functions: {', '.join(missing)}")


def _assert_finite(arr, where, t):
    if not np.all(np.isfinite(arr)):
        flat = np.asarray(arr)
        bad = np.argwhere(~np.isfinite(flat))
        first = tuple(int(v) for v in bad[0]) if bad.size else ()
        raise DomainError(f"non-finite value while evaluating {where} at t={t}, index {first}")


def _fd_array(expr, var, bindings, order=1, step=DEFAULT_FD_STEP):
    """Vector version of exprlang.partial_derivative (same stencils and step rule)."""
    v = np.asarray(bindings[var], dtype=float)
    h = step * np.maximum(1.0, np.abs(v))
    up = eval_expr_array(expr, {**bindings, var: v + h})
    dn = eval_expr_array(expr, {**bindings, var: v - h})
    if order == 1:
        return (up - dn) / (2.0 * h)
    mid = eval_expr_array(expr, bindings)
    return (up - 2.0 * mid + dn) / (h * h)


# ---------------------------------------------------------------------------
# Lyapunov operators (scalar)


def lyapunov_operator_LU(spec: LyapunovSpec, model: ValidatedModel, x, y, t, step=DEFAULT_FD_STEP):
    """U_t + U_x * f(x, x, t) + G(2 g(x,y,t) U_x + h(t)^2 U_xx).

    Note the drift enters at the undelayed point (x, x, t); only g sees y.
    """
    _require(spec, [("U", spec.U)])
    pt = {"x": x, "t": t}
    u_t = exprlang.partial_derivative(spec.U, "t", pt, step)
    u_x = exprlang.partial_derivative(spec.U, "x", pt, step)
    u_xx = exprlang.partial_derivative(spec.U, "x", pt, step, order=2)
    h = model.h(t)
    g = 0.0 if model.g_is_zero else model.g(x, y, t)
    return u_t + u_x * model.f(x, x, t) + g_generator(2.0 * g * u_x + h * h * u_xx, model.vol)


def lyapunov_operator_LbarU(spec: LyapunovSpec, model: ValidatedModel, x, y, t, step=DEFAULT_FD_STEP):
    """Ubar_t + Ubar_x * f(x, y, t) + G(2 Ubar_x g + Ubar_xx h^2): the drift is delayed."""
    _require(spec, [("Ubar", spec.Ubar)])
    pt = {"x": x, "t": t}
    u_t = exprlang.partial_derivative(spec.Ubar, "t", pt, step)
    u_x = exprlang.partial_derivative(spec.Ubar, "x", pt, step)
    u_xx = exprlang.partial_derivative(spec.Ubar, "x", pt, step, order=2)
    h = model.h(t)
    g = 0.0 if model.g_is_zero else model.g(x, y, t)
    return u_t + u_x * model.f(x, y, t) + g_generator(2.0 * g * u_x + h * h * u_xx, model.vol)


def _beta3_term(spec, model, g2d):
    """beta3 * |g|^2 with the convention that g == 0 kills the term outright."""
    if model.g_is_zero:
        return 0.0
    if spec.beta3 is None:
        raise ValueError("missing constants/functions: beta3")
    if math.isinf(spec.beta3):
        raise InfiniteBeta3WithNonzeroG(
            "beta3 = inf is only permitted when g vanishes identically"
        )
    return spec.beta3 * g2d * g2d


# ---------------------------------------------------------------------------
# Checkers


def check_stability_assumption(
    spec: LyapunovSpec,
    model: ValidatedModel,
    grid: GridSpec = DEFAULT_GRID,
    tolerance=DEFAULT_TOLERANCE,
    fd_step=DEFAULT_FD_STEP,
):
    """Grid check of the dissipation condition

        LU(x,y,t) + b1|U_x|^2 + b2|f|^2 + b3|g|^2 + b4|h|^2
            <= -alpha1 U1(x,t) + alpha2 U1(y, t - delta(t))

    plus the scalar side condition alpha2 < alpha1 (1 - delta_dot_bound).
    """
    _require(
        spec,
        [
            ("U", spec.U),
            ("U1", spec.U1),
            ("beta1", spec.beta1),
            ("beta2", spec.beta2),
            ("beta4", spec.beta4),
            ("alpha1", spec.alpha1),
            ("alpha2", spec.alpha2),
        ],
    )
    mdl = model.model
    xs = grid.x_values()
    ys = grid.y_values()
    xcol = xs[:, None]
    yrow = ys[None, :]
    worst = _Worst()
    side = spec.alpha2 - spec.alpha1 * (1.0 - model.delta_dot_bound)
    worst.offer(side, None, "side condition alpha2 < alpha1*(1 - delta_dot_bound)")

    h2_const = spec.beta4
    for tv in grid.t_values():
        t = float(tv)
        bind_x = {"x": xs, "t": t}
        u_t = _fd_array(spec.U, "t", bind_x, step=fd_step)
        u_x = _fd_array(spec.U, "x", bind_x, step=fd_step)
        u_xx = _fd_array(spec.U, "x", bind_x, order=2, step=fd_step)
        f_diag = eval_expr_array(mdl.drift_f, {"x": xs, "y": xs, "t": t})
        f2d = eval_expr_array(mdl.drift_f, {"x": xcol, "y": yrow, "t": t})
        hval = model.h(t)
        u1_x = eval_expr_array(spec.U1, {"x": xs, "t": t})
        t_shift = t - model.delta(t)
        u1_y = eval_expr_array(spec.U1, {"x": ys, "t": t_shift})

        base = u_t + u_x * f_diag  # 1-d in x
        if model.g_is_zero:
            lu = base + _g_generator_array(hval * hval * u_xx, model.vol)
            lhs = (lu + spec.beta1 * u_x * u_x)[:, None] + spec.beta2 * f2d * f2d
        else:
            g2d = eval_expr_array(mdl.qv_coeff_g, {"x": xcol, "y": yrow, "t": t})
            garg = 2.0 * g2d * u_x[:, None] + (hval * hval) * u_xx[:, None]
            lu = base[:, None] + _g_generator_array(garg, model.vol)
            lhs = lu + (spec.beta1 * u_x * u_x)[:, None] + spec.beta2 * f2d * f2d
            lhs = lhs + _beta3_term(spec, model, g2d)
        v = (
            lhs
            + h2_const * hval * hval
            + spec.alpha1 * u1_x[:, None]
            - spec.alpha2 * u1_y[None, :]
        )
        _assert_finite(v, "stability-assumption check", t)
        worst.offer_slice(v, xs, ys, t, "grid")

    detail = f"worst term: {worst.label}; side-condition margin {side:.6g}"
    return CheckReport(
        name="stability-assumption",
        satisfied=worst.value <= tolerance,
        max_violation=worst.value,
        witness=worst.witness,
        grid=grid.describe(),
        tolerance=tolerance,
        detail=detail,
    )


def check_khasminskii(
    spec: LyapunovSpec,
    model: ValidatedModel,
    grid: GridSpec = DEFAULT_GRID,
    tolerance=DEFAULT_TOLERANCE,
    fd_step=DEFAULT_FD_STEP,
):
    """Grid check of the boundedness (Khasminskii-type) condition:

        c3 < c2 (1 - delta_dot_bound)              (scalar)
        |x|^q <= Ubar(x,t) <= H(x,t)               (on the x-t grid)
        LbarU(x,y,t) <= c1 - c2 H(x,t) + c3 H(y, t - delta(t))
    """
    _require(
        spec,
        [
            ("Ubar", spec.Ubar),
            ("H", spec.H),
            ("c1", spec.c1),
            ("c2", spec.c2),
            ("c3", spec.c3),
        ],
    )
    q = spec.resolved_q()
    mdl = model.model
    xs = grid.x_values()
    ys = grid.y_values()
    xcol = xs[:, None]
    yrow = ys[None, :]
    worst = _Worst()
    side = spec.c3 - spec.c2 * (1.0 - model.delta_dot_bound)
    worst.offer(side, None, "side condition c3 < c2*(1 - delta_dot_bound)")

    absxq = np.abs(xs) ** q
    for tv in grid.t_values():
        t = float(tv)
        bind_x = {"x": xs, "t": t}
        ubar = eval_expr_array(spec.Ubar, bind_x)
        hfun = eval_expr_array(spec.H, bind_x)
        _assert_finite(ubar, "Ubar", t)
        _assert_finite(hfun, "H", t)
        worst.offer_axis(absxq - ubar, xs, t, "|x|^q <= Ubar")
        worst.offer_axis(ubar - hfun, xs, t, "Ubar <= H")

        ub_t = _fd_array(spec.Ubar, "t", bind_x, step=fd_step)
        ub_x = _fd_array(spec.Ubar, "x", bind_x, step=fd_step)
        ub_xx = _fd_array(spec.Ubar, "x", bind_x, order=2, step=fd_step)
        f2d = eval_expr_array(mdl.drift_f, {"x": xcol, "y": yrow, "t": t})
        hval = model.h(t)
        t_shift = t - model.delta(t)
        h_y = eval_expr_array(spec.H, {"x": ys, "t": t_shift})
        if model.g_is_zero:
            garg = (hval * hval) * ub_xx
            lbar = (ub_t + _g_generator_array(garg, model.vol))[:, None] + ub_x[:, None] * f2d
        else:
            g2d = eval_expr_array(mdl.qv_coeff_g, {"x": xcol, "y": yrow, "t": t})
            garg = 2.0 * g2d * ub_x[:, None] + (hval * hval) * ub_xx[:, None]
            lbar = ub_t[:, None] + ub_x[:, None] * f2d + _g_generator_array(garg, model.vol)
        v = lbar - (spec.c1 - spec.c2 * hfun[:, None] + spec.c3 * h_y[None, :])
        _assert_finite(v, "khasminskii drift condition", t)
        worst.offer_slice(v, xs, ys, t, "LbarU <= c1 - c2 H + c3 H(y, t-delta)")

    detail = f"worst term: {worst.label}; side-condition margin {side:.6g}"
    return CheckReport(
        name="khasminskii",
        satisfied=worst.value <= tolerance,
        max_violation=worst.value,
        witness=worst.witness,
        grid=grid.describe(),
        tolerance=tolerance,
        detail=detail,
    )


def check_delay_lipschitz(
    model: ValidatedModel,
    varpi,
    grid: GridSpec = DEFAULT_GRID,
    tolerance=DEFAULT_TOLERANCE,
):
    """Grid estimate of sup |f(x,x,t) - f(x,y,t)| / |x - y| compared with varpi."""
    if varpi is None or not varpi > 0:
        raise NonPositiveParameter(f"varpi must be positive, got {varpi}")
    mdl = model.model
    xs = grid.x_values()
    ys = grid.y_values()
    xcol = xs[:, None]
    yrow = ys[None, :]
    den = np.abs(xcol - yrow)
    usable = den > 0
    worst = _Worst()
    with np.errstate(all="ignore"):
        for tv in grid.t_values():
            t = float(tv)
            f_diag = eval_expr_array(mdl.drift_f, {"x": xs, "y": xs, "t": t})
            f2d = eval_expr_array(mdl.drift_f, {"x": xcol, "y": yrow, "t": t})
            num = np.abs(f_diag[:, None] - f2d)
            _assert_finite(num, "delay-lipschitz numerator", t)
            ratio = np.where(usable, num / den, -np.inf)
            worst.offer_slice(ratio, xs, ys, t, "ratio")
    max_ratio = worst.value
    violation = max_ratio - varpi
    return CheckReport(
        name="delay-lipschitz",
        satisfied=violation <= tolerance,
        max_violation=violation,
        witness=worst.witness,
        grid=grid.describe(),
        tolerance=tolerance,
        detail=f"max ratio {max_ratio:.6g} vs varpi {varpi:g}",
    )


def check_polynomial_growth(
    model: ValidatedModel,
    K=None,
    q1=None,
    q2=None,
    grid: GridSpec = DEFAULT_GRID,
    tolerance=DEFAULT_TOLERANCE,
):
    """Grid check of |f| <= K(1+|x|^q1+|y|^q1), |g| <= K(1+|x|^q2+|y|^q2), |h| <= K."""
    mdl = model.model
    K = K if K is not None else mdl.growth_K
    q1 = q1 if q1 is not None else mdl.growth_q1
    q2 = q2 if q2 is not None else mdl.growth_q2
    _require(None, [("K", K), ("q1", q1), ("q2", q2)])
    xs = grid.x_values()
    ys = grid.y_values()
    xcol = xs[:, None]
    yrow = ys[None, :]
    bound1 = K * (1.0 + np.abs(xcol) ** q1 + np.abs(yrow) ** q1)
    bound2 = K * (1.0 + np.abs(xcol) ** q2 + np.abs(yrow) ** q2)
    worst = _Worst()
    tvals = grid.t_values()
    for tv in tvals:
        t = float(tv)
        f2d = eval_expr_array(mdl.drift_f, {"x": xcol, "y": yrow, "t": t})
        _assert_finite(f2d, "drift growth", t)
        worst.offer_slice(np.abs(f2d) - bound1, xs, ys, t, "drift growth")
        if not model.g_is_zero:
            g2d = eval_expr_array(mdl.qv_coeff_g, {"x": xcol, "y": yrow, "t": t})
            _assert_finite(g2d, "qv growth", t)
            worst.offer_slice(np.abs(g2d) - bound2, xs, ys, t, "qv growth")
    hvals = np.array([model.h(float(t)) for t in tvals])
    hviol = np.abs(hvals) - K
    i = int(np.argmax(hviol))
    worst.offer(float(hviol[i]), {"t": float(tvals[i])}, "noise bound |h| <= K")
    return CheckReport(
        name="polynomial-growth",
        satisfied=worst.value <= tolerance,
        max_violation=worst.value,
        witness=worst.witness,
        grid=grid.describe(),
        tolerance=tolerance,
        detail=f"worst term: {worst.label}",
    )
