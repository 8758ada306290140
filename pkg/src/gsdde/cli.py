"""Config-driven experiment runner.

Subcommands:

* ``simulate <config>``    validate, generate, integrate, estimate; write CSV
* ``delay-bound <config>`` print the three admissible-delay terms and their min
* ``check <config>``       run all four assumption checkers
* ``reproduce <preset>``   run a named benchmark preset and classify the outcome

Exit codes: 0 success/satisfied, 1 check failed, 2 config error, 3 runtime
(explosion) error.  ``GSDDE_THREADS`` caps integration parallelism; results
do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time as _time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import registry, scenario, stability
from .config import ConfigError, ExperimentConfig, VerdictSettings, load_config, require_keys
from .integrator import (
    AllPathsExploded,
    IntegrationError,
    integrate_ensemble,
    write_paths_csv,
)
from .model import ModelError, validate_model
from .scenario import ScenarioError, TimeGrid, align_steps, build_volatility_grid, generate_ensemble
from .sublinear import AbsPower, EstimateError, ExprFunctional, estimate_series, write_series_csv

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class SeriesTooShort(Exception):
    pass


@dataclass
class VerdictReport:
    """Heuristic reading of an estimate series (thresholds are config-exposed)."""

    verdict: str  # "Stable" | "Unstable" | "Inconclusive"
    tail_upper: float
    tail_lower: float
    initial_upper: float
    thresholds: dict

    def format_text(self):
        th = self.thresholds
        return "\n".join(
            [
                f"verdict: {self.verdict}",
                f"  initial upper estimate : {self.initial_upper:.6g}",
                f"  tail mean of upper     : {self.tail_upper:.6g}",
                f"  tail mean of lower     : {self.tail_lower:.6g}",
                "  thresholds (pilot-calibrated heuristics): "
                f"window_fraction={th['window_fraction']:g} "
                f"stable_ratio={th['stable_ratio']:g} "
                f"unstable_floor={th['unstable_floor']:g}",
            ]
        )

    def to_json_dict(self):
        return {
            "verdict": self.verdict,
            "tail_upper": self.tail_upper,
            "tail_lower": self.tail_lower,
            "initial_upper": self.initial_upper,
            "thresholds": self.thresholds,
        }


def stability_verdict(series, window_fraction=0.2, stable_ratio=0.05, unstable_floor=0.5):
    """Stable when the upper tail collapses relative to its start, Unstable when
    the lower tail stays above the floor, otherwise Inconclusive."""
    length = len(series.upper)
    if length < 10:
        raise SeriesTooShort(f"need at least 10 points, got {length}")
    count = max(1, int(round(window_fraction * length)))
    tail_upper = float(np.mean(series.upper[-count:]))
    tail_lower = float(np.mean(series.lower[-count:]))
    initial_upper = float(series.upper[0])
    if tail_upper <= stable_ratio * initial_upper:
        verdict = "Stable"
    elif tail_lower >= unstable_floor:
        verdict = "Unstable"
    else:
        verdict = "Inconclusive"
    return VerdictReport(
        verdict=verdict,
        tail_upper=tail_upper,
        tail_lower=tail_lower,
        initial_upper=initial_upper,
        thresholds={
            "window_fraction": window_fraction,
            "stable_ratio": stable_ratio,
            "unstable_floor": unstable_floor,
        },
    )


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _functional(cfg: ExperimentConfig):
    if cfg.functional_expr is not None:
        return ExprFunctional(cfg.functional_expr)
    return AbsPower(p=cfg.p)


def _pipeline(cfg: ExperimentConfig, report=print):
    """validate -> grid -> ensemble -> integrate -> estimate."""
    require_keys(cfg, [("f (model section)", cfg.model)])
    steps = cfg.resolved_steps()
    tau = cfg.model.delay.tau
    aligned = align_steps(cfg.horizon, tau, steps)
    if aligned != steps:
        report(f"adjusted steps {steps} -> {aligned} to align tau={tau:g} with the grid")
    grid = TimeGrid(horizon=cfg.horizon, steps=aligned, tau=tau)
    model = validate_model(cfg.model, cfg.history, grid)
    vol_grid = build_volatility_grid(model.vol, cfg.m)
    ens = generate_ensemble(vol_grid, cfg.n, grid, cfg.seed)
    paths = integrate_ensemble(model, ens)
    series = estimate_series(paths, _functional(cfg))
    return grid, vol_grid, paths, series


def _series_headers(cfg: ExperimentConfig, grid, extra=()):
    headers = [
        "gsdde estimate series",
        f"functional: {_functional(cfg).description}",
        f"m={cfg.m} n={cfg.n} steps={grid.steps} horizon={cfg.horizon!r} seed={cfg.seed}",
    ]
    headers.extend(extra)
    return headers


def _write_gnuplot(path, csv_name, include_upper):
    lines = [
        "set datafile separator ','",
        "set xlabel 't'",
        "set ylabel 'estimate'",
        "set key top right",
    ]
    if include_upper:
        lines.append(
            f"plot '{csv_name}' using 1:2 with lines title 'upper', "
            "'' using 1:3 with lines title 'lower'"
        )
    else:
        lines.append(f"plot '{csv_name}' using 1:2 with lines title 'lower'")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_simulate(cfg: ExperimentConfig, out_dir=None, fmt="csv", dump_paths=None,
                 gnuplot=False, report=print):
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _time.perf_counter()
    grid, vol_grid, paths, series = _pipeline(cfg, report)
    elapsed = _time.perf_counter() - started

    if fmt == "json":
        target = out / "series.json"
        _write_json(
            target,
            {
                "t": [float(v) for v in series.times],
                "upper": [float(v) for v in series.upper],
                "lower": [float(v) for v in series.lower],
                "excluded": [int(v) for v in series.excluded],
                "functional": series.functional,
            },
        )
    else:
        target = out / "series.csv"
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            write_series_csv(series, fh, header_lines=_series_headers(cfg, grid))
    if gnuplot:
        _write_gnuplot(out / "series.gp", target.name, include_upper=True)
    if dump_paths:
        with open(dump_paths, "w", encoding="utf-8", newline="\n") as fh:
            write_paths_csv(paths, fh)

    levels = ", ".join(f"{v:.8g}" for v in vol_grid.levels)
    report(f"volatility levels (m={vol_grid.m}): {levels}")
    report(f"paths: {paths.m * paths.n}, steps: {grid.steps}, dt: {grid.dt:g}, seed: {cfg.seed}")
    report(f"exploded paths: {paths.exploded_total()}")
    report(
        f"terminal estimates of {series.functional}: "
        f"upper={float(series.upper[-1]):.6g} lower={float(series.lower[-1]):.6g}"
    )
    report(f"wrote {target}")
    report(f"wall time: {elapsed:.2f} s")
    return series


def run_delay_bound(cfg: ExperimentConfig, out_dir=None, fmt="text", report=print):
    spec = cfg.lyapunov
    require_keys(
        cfg,
        [
            ("beta1", getattr(spec, "beta1", None)),
            ("beta2", getattr(spec, "beta2", None)),
            ("beta4", getattr(spec, "beta4", None)),
            ("varpi", getattr(spec, "varpi", None)),
            ("sigma_upper_sq", cfg.model.vol.sigma_upper_sq if cfg.model else None),
        ],
    )
    beta3 = spec.beta3 if spec.beta3 is not None else math.inf
    sigma_upper = cfg.model.vol.sigma_upper
    terms = stability.delay_bound_terms(
        spec.beta1, spec.beta2, beta3, spec.beta4, spec.varpi, sigma_upper
    )
    tau_max = min(terms)
    payload = {
        "term_drift": terms[0],
        "term_qv": terms[1],
        "term_noise": terms[2],
        "tau_max": tau_max,
    }
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "delay_bound.json", payload)
    if fmt == "json":
        report(json.dumps(_json_safe(payload), indent=2, sort_keys=True))
    else:
        report(f"term drift (beta1, beta2)        : {terms[0]:.8g}")
        report(f"term qv    (beta1, beta3, sigma) : {terms[1]:.8g}")
        report(f"term noise (beta1, beta4, sigma) : {terms[2]:.8g}")
        report(f"tau_max                          : {tau_max:.8g}")
    return tau_max, terms


def run_check(cfg: ExperimentConfig, out_dir=None, fmt="text", report=print):
    spec = cfg.lyapunov
    require_keys(cfg, [("f (model section)", cfg.model), ("U", getattr(spec, "U", None))])
    model = validate_model(cfg.model, cfg.history)
    require_keys(
        cfg,
        [
            ("U1", spec.U1),
            ("Ubar", spec.Ubar),
            ("H", spec.H),
            ("beta1", spec.beta1),
            ("beta2", spec.beta2),
            ("beta4", spec.beta4),
            ("alpha1", spec.alpha1),
            ("alpha2", spec.alpha2),
            ("c1", spec.c1),
            ("c2", spec.c2),
            ("c3", spec.c3),
            ("varpi", spec.varpi),
            ("K", cfg.model.growth_K),
            ("q1", cfg.model.growth_q1),
            ("q2", cfg.model.growth_q2),
        ],
    )
    reports = [
        stability.check_polynomial_growth(model, grid=cfg.grid, tolerance=cfg.tolerance),
        stability.check_khasminskii(spec, model, grid=cfg.grid, tolerance=cfg.tolerance),
        stability.check_delay_lipschitz(model, spec.varpi, grid=cfg.grid, tolerance=cfg.tolerance),
        stability.check_stability_assumption(spec, model, grid=cfg.grid, tolerance=cfg.tolerance),
    ]
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "check_report.json", [r.to_json_dict() for r in reports])
    if fmt == "json":
        report(json.dumps(_json_safe([r.to_json_dict() for r in reports]), indent=2, sort_keys=True))
    else:
        for r in reports:
            report(r.format_text())
    ok = all(r.satisfied for r in reports)
    report(f"overall: {'all satisfied' if ok else 'FAILED'}")
    return reports


def preset_config(figure, seed=None, m=None, n=None, steps=None, horizon=None):
    """Build the ExperimentConfig for a named reproduction preset."""
    preset = registry.FIGURE_PRESETS[figure]
    model, history = registry.example41(delta=preset["delta"])
    return ExperimentConfig(
        path=f"<preset {figure}>",
        model=model,
        history=history,
        m=m if m is not None else registry.PRESET_M,
        n=n if n is not None else registry.PRESET_N,
        steps=steps if steps is not None else registry.PRESET_STEPS,
        horizon=horizon if horizon is not None else registry.PRESET_HORIZON,
        seed=seed if seed is not None else registry.PRESET_SEED,
        p=registry.PRESET_P,
        verdict=VerdictSettings(
            window_fraction=registry.PRESET_WINDOW_FRACTION,
            stable_ratio=registry.PRESET_STABLE_RATIO,
            unstable_floor=registry.PRESET_UNSTABLE_FLOOR,
        ),
    )


def run_reproduce(figure, out_dir=".", seed=None, m=None, n=None, steps=None,
                  horizon=None, gnuplot=False, report=print):
    if figure not in registry.FIGURE_PRESETS:
        raise ConfigError("<preset>", 0, f"unknown preset {figure!r}")
    include_upper = registry.FIGURE_PRESETS[figure]["include_upper"]
    cfg = preset_config(figure, seed=seed, m=m, n=n, steps=steps, horizon=horizon)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    started = _time.perf_counter()
    grid, vol_grid, paths, series = _pipeline(cfg, report)
    elapsed = _time.perf_counter() - started

    delta = registry.FIGURE_PRESETS[figure]["delta"]
    vs = cfg.verdict
    headers = _series_headers(
        cfg,
        grid,
        extra=[
            f"preset: {figure} (delta={delta:g})",
            "verdict thresholds (pilot-calibrated heuristics): "
            f"window_fraction={vs.window_fraction:g} stable_ratio={vs.stable_ratio:g} "
            f"unstable_floor={vs.unstable_floor:g}",
        ],
    )
    csv_path = out / f"{figure}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        write_series_csv(series, fh, include_upper=include_upper, header_lines=headers)
    if gnuplot:
        _write_gnuplot(out / f"{figure}.gp", csv_path.name, include_upper)

    verdict = stability_verdict(
        series,
        window_fraction=vs.window_fraction,
        stable_ratio=vs.stable_ratio,
        unstable_floor=vs.unstable_floor,
    )
    _write_json(out / f"{figure}_verdict.json", verdict.to_json_dict())
    report(f"preset {figure}: delta={delta:g}, exploded paths: {paths.exploded_total()}")
    report(verdict.format_text())
    report(f"wrote {csv_path}")
    report(f"wall time: {elapsed:.2f} s")
    return verdict


# ---------------------------------------------------------------------------
# argparse wiring


def _add_common(sp, with_sim=True):
    if with_sim:
        sp.add_argument("--seed", type=int, default=None, help="override the RNG seed (u64)")
        sp.add_argument("--m", type=int, default=None, help="override the level count")
        sp.add_argument("--n", type=int, default=None, help="override samples per level")
        sp.add_argument("--steps", type=int, default=None, help="override the step count")
        sp.add_argument("--horizon", type=float, default=None, help="override the horizon T")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")


def _apply_overrides(cfg: ExperimentConfig, args):
    updates = {}
    for name in ("seed", "m", "n", "steps", "horizon"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    return replace(cfg, **updates) if updates else cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gsdde",
        description="Scenario-ensemble simulation and stability checks for "
        "nonlinear stochastic delay equations under volatility uncertainty.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the full estimation pipeline")
    p_sim.add_argument("config")
    _add_common(p_sim)
    p_sim.add_argument("--dump-paths", default=None, help="also dump raw paths to this CSV")
    p_sim.add_argument("--gnuplot", action="store_true", help="emit a gnuplot script")

    p_db = sub.add_parser("delay-bound", help="compute the admissible delay bound")
    p_db.add_argument("config")
    _add_common(p_db, with_sim=False)

    p_chk = sub.add_parser("check", help="run every assumption checker")
    p_chk.add_argument("config")
    _add_common(p_chk, with_sim=False)

    p_rep = sub.add_parser("reproduce", help="run a named benchmark preset")
    p_rep.add_argument("figure", choices=sorted(registry.FIGURE_PRESETS))
    _add_common(p_rep)
    p_rep.add_argument("--gnuplot", action="store_true", help="emit a gnuplot script")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _apply_overrides(load_config(args.config), args)
            run_simulate(cfg, out_dir=args.out, fmt=args.fmt,
                         dump_paths=args.dump_paths, gnuplot=args.gnuplot)
            return EXIT_OK
        if args.command == "delay-bound":
            cfg = load_config(args.config)
            run_delay_bound(cfg, out_dir=args.out,
                            fmt="json" if args.fmt == "json" else "text")
            return EXIT_OK
        if args.command == "check":
            cfg = load_config(args.config)
            reports = run_check(cfg, out_dir=args.out,
                                fmt="json" if args.fmt == "json" else "text")
            return EXIT_OK if all(r.satisfied for r in reports) else EXIT_CHECK_FAILED
        if args.command == "reproduce":
            run_reproduce(
                args.figure,
                out_dir=args.out if args.out is not None else ".",
                seed=args.seed,
                m=args.m,
                n=args.n,
                steps=args.steps,
                horizon=args.horizon,
                gnuplot=args.gnuplot,
            )
            return EXIT_OK
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, ScenarioError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, EstimateError) as exc:
        print(
            f"runtime error: {exc}\n"
            "hint: the scheme is explicit; reduce the step size, shorten the "
            "horizon or tame the initial data if paths explode",
            file=sys.stderr,
        )
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
