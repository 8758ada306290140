import math
from fractions import Fraction

import numpy as np
import pytest

from gsdde import registry
from gsdde.exprlang import parse_expr as e
from gsdde.integrator import (
    AllPathsExploded,
    LookbackBeforeHistory,
    delayed_state,
    integrate_ensemble,
    integrate_path,
)
from gsdde.model import (
    DelaySpec,
    GSDDEModel,
    InitialHistory,
    VolatilityBounds,
    validate_model,
)
from gsdde.scenario import TimeGrid, build_volatility_grid, generate_ensemble


def _model(f="0", g="0", h="0", eta="0", delta="0", tau=0.001, ddot=0.0,
           lo=1.0, hi=1.0):
    model = GSDDEModel(
        drift_f=e(f),
        qv_coeff_g=e(g),
        noise_h=e(h),
        delay=DelaySpec(tau=tau, delta=e(delta), delta_dot_bound=ddot),
        vol=VolatilityBounds(lo, hi),
    )
    return model, InitialHistory(eta=e(eta))


class TestIntegratePath:
    def test_zero_dynamics_keeps_constant(self):
        grid = TimeGrid(horizon=0.01, steps=10, tau=0.001)
        vm = validate_model(*_model(eta="3"), grid)
        path = integrate_path(vm, grid, np.zeros(10), 1.0)
        assert np.all(path.values == 3.0)
        assert path.ok

    def test_single_step_hand_value(self):
        # benchmark drift, eta == 1, dt = 1e-3, zero increment, no delay:
        # X(t1) = 1 + (-1 - 1) * 0.001 = 0.998 exactly
        grid = TimeGrid(horizon=0.001, steps=1, tau=0.001)
        vm = validate_model(*_model(f="-x^3 - y", h="0.5*exp(-t)", eta="1",
                                    lo=0.5, hi=1.0), grid)
        path = integrate_path(vm, grid, np.zeros(1), 1.0)
        assert float(path.values[-1]) == 0.998

    def test_linear_contraction_closed_form(self):
        # f = -x, no noise: X(t_i) = (1 - dt)^i; compare against the recursion
        # evaluated in exact rational arithmetic
        steps = 1000
        grid = TimeGrid(horizon=1.0, steps=steps, tau=0.001)
        vm = validate_model(*_model(f="-x", eta="1"), grid)
        path = integrate_path(vm, grid, np.zeros(steps), 1.0)
        factor = Fraction(1) - Fraction(grid.dt)
        acc = Fraction(1)
        hist = grid.history_steps
        worst = 0.0
        for i in range(1, steps + 1):
            acc *= factor
            worst = max(worst, abs(float(path.values[hist + i]) - float(acc)))
        assert worst <= 1e-14

    def test_explosion_flagging(self):
        grid = TimeGrid(horizon=5.0, steps=50, tau=0.1)
        vm = validate_model(*_model(f="x^5", eta="2", tau=0.1), grid)
        path = integrate_path(vm, grid, np.zeros(50), 1.0)
        assert not path.ok
        assert path.exploded_at is not None
        hist = grid.history_steps
        assert np.all(np.isnan(path.values[hist + path.exploded_at:]))
        assert np.all(np.isfinite(path.values[: hist + path.exploded_at]))

    def test_benchmark_short_run_finite(self):
        model, history = registry.example41()
        grid = TimeGrid(horizon=2.0, steps=2000, tau=0.01)
        vm = validate_model(model, history, grid)
        vg = build_volatility_grid(vm.vol, 5)
        ens = generate_ensemble(vg, 20, grid, seed=42)
        paths = integrate_ensemble(vm, ens)
        assert paths.exploded_total() == 0


class TestDelayedState:
    def _setup(self, delta="0.003", tau=0.01):
        grid = TimeGrid(horizon=0.05, steps=50, tau=tau)
        vm = validate_model(*_model(f="-x", eta="2 + sin(u)", delta=delta,
                                    tau=tau, ddot=0.0), grid)
        path = integrate_path(vm, grid, np.zeros(50), 1.0)
        return grid, vm, path

    def test_grid_aligned_lookback_is_exact(self):
        grid, vm, path = self._setup(delta="0.003")
        hist = grid.history_steps
        t = 0.02
        got = delayed_state(path.values, grid, vm, t, 0.003)
        want = float(path.values[hist + 17])  # (0.02 - 0.003)/0.001 = 17
        assert got == want

    def test_zero_delay_returns_current_state(self):
        grid, vm, path = self._setup(delta="0")
        hist = grid.history_steps
        t = 0.04
        assert delayed_state(path.values, grid, vm, t, 0.0) == float(path.values[hist + 40])

    def test_history_lookback_evaluates_eta_directly(self):
        grid, vm, path = self._setup()
        got = delayed_state(path.values, grid, vm, 0.001, 0.006)  # s = -0.005
        assert got == 2.0 + math.sin(-0.005)

    def test_off_grid_interpolation(self):
        grid, vm, path = self._setup()
        hist = grid.history_steps
        t, d = 0.02, 0.0015  # s = 0.0185, midway between grid points 18 and 19
        got = delayed_state(path.values, grid, vm, t, d)
        a, b = float(path.values[hist + 18]), float(path.values[hist + 19])
        assert math.isclose(got, 0.5 * (a + b), rel_tol=1e-9)

    def test_lookback_before_history(self):
        grid, vm, path = self._setup()
        with pytest.raises(LookbackBeforeHistory):
            delayed_state(path.values, grid, vm, 0.0, 0.02)

    def test_aligned_delay_never_interpolates(self):
        model, history = registry.example41(delta=0.01)
        grid = TimeGrid(horizon=0.1, steps=100, tau=0.01)
        vm = validate_model(model, history, grid)
        path = integrate_path(vm, grid, np.zeros(100), 1.0)
        assert path.interpolation_count == 0

    def test_unaligned_delay_counts_interpolations(self):
        grid, vm, _ = self._setup(delta="0.0015")
        path = integrate_path(vm, grid, np.zeros(50), 1.0)
        assert path.interpolation_count > 0


class TestEnsemble:
    def test_singleton_reduces_to_integrate_path(self):
        model, history = registry.example41()
        grid = TimeGrid(horizon=0.5, steps=500, tau=0.01)
        vm = validate_model(model, history, grid)
        vg = build_volatility_grid(VolatilityBounds(1.0, 1.0), 1)
        ens = generate_ensemble(vg, 1, grid, seed=17)
        bundle = integrate_ensemble(vm, ens)
        single = integrate_path(vm, grid, ens.increments[0, 0], vg.levels[0])
        assert bundle.paths[0][0].values.tobytes() == single.values.tobytes()

    def test_deterministic_and_thread_independent(self):
        model, history = registry.example41()
        grid = TimeGrid(horizon=0.2, steps=200, tau=0.01)
        vm = validate_model(model, history, grid)
        vg = build_volatility_grid(vm.vol, 3)
        ens = generate_ensemble(vg, 4, grid, seed=5)
        a = integrate_ensemble(vm, ens, threads=1)
        b = integrate_ensemble(vm, ens, threads=4)
        assert a.values_array().tobytes() == b.values_array().tobytes()

    def test_all_paths_exploding_raises(self):
        grid = TimeGrid(horizon=5.0, steps=50, tau=0.1)
        vm = validate_model(*_model(f="x^5", eta="2", tau=0.1), grid)
        vg = build_volatility_grid(VolatilityBounds(1.0, 1.0), 1)
        ens = generate_ensemble(vg, 3, grid, seed=1)
        with pytest.raises(AllPathsExploded):
            integrate_ensemble(vm, ens)

    def test_classical_second_moment_matches_recursion(self):
        # degenerate band: plain Monte Carlo; E[X_i^2] satisfies the exact
        # discrete recursion e_i = (1 - dt)^2 e_{i-1} + dt
        model, history = registry.linear_ou()
        steps, n = 200, 3000
        grid = TimeGrid(horizon=0.2, steps=steps, tau=0.001)
        vm = validate_model(model, history, grid)
        vg = build_volatility_grid(vm.vol, 1)
        ens = generate_ensemble(vg, n, grid, seed=8)
        paths = integrate_ensemble(vm, ens)
        term_sq = paths.values_array()[:, :, -1] ** 2
        dt = grid.dt
        exact = 1.0
        for _ in range(steps):
            exact = (1.0 - dt) ** 2 * exact + dt
        se = float(term_sq.std(ddof=1)) / math.sqrt(term_sq.size)
        assert abs(float(term_sq.mean()) - exact) <= 3.0 * se
