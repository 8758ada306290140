import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsdde.exprlang import parse_expr as e
from gsdde.integrator import AllPathsExploded, Path, PathEnsemble
from gsdde.model import DelaySpec, GSDDEModel, InitialHistory, VolatilityBounds, validate_model
from gsdde.scenario import TimeGrid, build_volatility_grid, generate_ensemble
from gsdde.sublinear import (
    AbsPower,
    EmptyEnsemble,
    ExcessiveExplosions,
    ExprFunctional,
    capacity_lower,
    capacity_upper,
    estimate_series,
    lower_expectation,
    upper_expectation,
)
from gsdde.integrator import integrate_ensemble


class TestPointEstimators:
    def test_constant_preserving(self):
        values = [[2.5] * 4] * 3
        assert upper_expectation(values) == 2.5
        assert lower_expectation(values) == 2.5

    def test_single_level_groups(self):
        # one level, two groups: means are just the samples
        values = [[1.0, 3.0]]
        assert upper_expectation(values) == 3.0
        assert lower_expectation(values) == 1.0

    def test_two_by_two_group_means(self):
        # groups are columns: j=0 holds (1, 3), j=1 holds (2, 2); both average 2
        values = [[1.0, 2.0], [3.0, 2.0]]
        assert upper_expectation(values) == 2.0
        assert lower_expectation(values) == 2.0

    def test_functional_is_applied(self):
        values = [[-2.0, 1.0]]
        assert upper_expectation(values, AbsPower(p=2.0)) == 4.0
        fn = ExprFunctional(e("x + 1"))
        assert upper_expectation(values, fn) == 2.0

    def test_plain_callable_functional(self):
        values = [[-2.0, 1.0]]
        assert upper_expectation(values, lambda v: v * 10.0) == 10.0

    def test_empty_rejected(self):
        with pytest.raises(EmptyEnsemble):
            upper_expectation(np.empty((0, 3)))
        with pytest.raises(EmptyEnsemble):
            lower_expectation([[]])
        with pytest.raises(EmptyEnsemble):
            upper_expectation([1.0, 2.0])

    def test_functional_descriptions(self):
        assert AbsPower(p=2.0).description == "abs(x)^2"
        assert ExprFunctional(e("x^2")).description == "x^2"
        with pytest.raises(ValueError):
            ExprFunctional(e("x + t"))


class TestCapacities:
    def test_all_ones(self):
        assert capacity_upper([[1.0, 1.0], [1.0, 1.0]]) == 1.0

    def test_all_zeros(self):
        assert capacity_lower([[0.0, 0.0], [0.0, 0.0]]) == 0.0

    def test_mixed_indicator(self):
        values = [[1.0, 0.0], [0.0, 0.0]]
        assert capacity_upper(values) == 0.5
        assert capacity_lower(values) == 0.0

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            capacity_upper([[0.5, 1.0]])


@st.composite
def float_arrays(draw, max_side=8):
    m = draw(st.integers(1, max_side))
    n = draw(st.integers(1, max_side))
    rows = draw(
        st.lists(
            st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n),
            min_size=m,
            max_size=m,
        )
    )
    return np.array(rows, dtype=float)


@st.composite
def float_array_pairs(draw, max_side=8):
    m = draw(st.integers(1, max_side))
    n = draw(st.integers(1, max_side))
    def rows():
        return st.lists(
            st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n),
            min_size=m,
            max_size=m,
        )
    return np.array(draw(rows()), dtype=float), np.array(draw(rows()), dtype=float)


def _dyadic(draw_rows):
    return np.array(draw_rows, dtype=float) / 256.0


@st.composite
def dyadic_array_pairs(draw):
    # values on the 1/256 lattice with group sizes in {1, 2, 4, 8}: every sum
    # and mean is exact in binary floating point, so the algebraic axioms can
    # be asserted with == / <= and no tolerance
    m = draw(st.sampled_from([1, 2, 4, 8]))
    n = draw(st.integers(1, 8))
    def rows():
        return st.lists(
            st.lists(st.integers(-2560, 2560), min_size=n, max_size=n),
            min_size=m,
            max_size=m,
        )
    return _dyadic(draw(rows())), _dyadic(draw(rows()))


class TestAxioms:
    @given(float_arrays())
    @settings(max_examples=300, deadline=None)
    def test_duality(self, arr):
        assert lower_expectation(arr) == -upper_expectation(-arr)

    @given(float_array_pairs())
    @settings(max_examples=300, deadline=None)
    def test_monotonicity(self, pair):
        arr, other = pair
        higher = arr + np.abs(other)
        assert upper_expectation(arr) <= upper_expectation(higher)
        assert lower_expectation(arr) <= lower_expectation(higher)

    @given(st.floats(-10, 10, allow_nan=False), st.integers(1, 8), st.integers(1, 8))
    @settings(max_examples=300, deadline=None)
    def test_constant_preserving(self, c, m, n):
        arr = np.full((m, n), c)
        assert upper_expectation(arr) == c
        assert lower_expectation(arr) == c

    @given(dyadic_arrays(), dyadic_arrays())
    @settings(max_examples=300, deadline=None)
    def test_sub_additivity(self, a, b):
        if a.shape != b.shape:
            b = np.zeros_like(a)
        assert upper_expectation(a + b) <= upper_expectation(a) + upper_expectation(b)

    @given(dyadic_arrays(), st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0, 4.0]))
    @settings(max_examples=300, deadline=None)
    def test_positive_homogeneity(self, arr, lam):
        assert upper_expectation(lam * arr) == lam * upper_expectation(arr)

    @given(float_arrays())
    @settings(max_examples=200, deadline=None)
    def test_lower_never_exceeds_upper(self, arr):
        assert lower_expectation(arr) <= upper_expectation(arr)


def _deterministic_ensemble():
    model = GSDDEModel(
        drift_f=e("-x"),
        qv_coeff_g=e("0"),
        noise_h=e("0"),
        delay=DelaySpec(tau=0.01, delta=e("0"), delta_dot_bound=0.0),
        vol=VolatilityBounds(0.5, 1.0),
    )
    history = InitialHistory(eta=e("2"))
    grid = TimeGrid(horizon=0.05, steps=50, tau=0.01)
    vm = validate_model(model, history, grid)
    vg = build_volatility_grid(vm.vol, 3)
    ens = generate_ensemble(vg, 4, grid, seed=3)
    return vm, grid, integrate_ensemble(vm, ens)


class TestSeries:
    def test_deterministic_model_collapses_estimates(self):
        # h = 0 and g = 0: every path is identical, so upper == lower == phi(X)
        vm, grid, paths = _deterministic_ensemble()
        series = estimate_series(paths, AbsPower(p=1.0))
        ref = np.abs(paths.paths[0][0].values[grid.history_steps:])
        assert np.array_equal(series.upper, ref)
        assert np.array_equal(series.lower, ref)
        assert np.all(series.excluded == 0)

    def test_matches_point_estimators_per_time(self):
        vm, grid, paths = _deterministic_ensemble()
        fn = AbsPower(p=2.0)
        series = estimate_series(paths, fn)
        hist = grid.history_steps
        for i in (0, 13, 50):
            window = paths.values_array()[:, :, hist + i]
            assert series.upper[i] == upper_expectation(window, fn)
            assert series.lower[i] == lower_expectation(window, fn)

    def test_lower_below_upper_on_noisy_ensemble(self):
        from gsdde import registry

        model, history = registry.example41()
        grid = TimeGrid(horizon=0.2, steps=200, tau=0.01)
        vm = validate_model(model, history, grid)
        vg = build_volatility_grid(vm.vol, 4)
        ens = generate_ensemble(vg, 6, grid, seed=21)
        series = estimate_series(integrate_ensemble(vm, ens), AbsPower())
        assert np.all(series.lower <= series.upper)
        assert np.all(np.isfinite(series.upper))


def _hand_ensemble(exploded, m, n, steps=4):
    """PathEnsemble with values[k][j][i] = k + j + i and given explosion steps."""
    grid = TimeGrid(horizon=float(steps), steps=steps, tau=0.0)
    paths = []
    for k in range(m):
        row = []
        for j in range(n):
            vals = np.array([float(k + j + i) for i in range(steps + 1)])
            at = exploded.get((k, j))
            if at is not None:
                vals[at:] = math.nan
            row.append(Path(values=vals, level_index=k, sample_index=j, exploded_at=at))
        paths.append(row)
    return PathEnsemble(paths=paths, time=grid, model=None)


class TestExplosionHandling:
    def test_exploded_paths_are_excluded(self):
        ens = _hand_ensemble({(1, 0): 2}, m=2, n=2)
        series = estimate_series(ens, AbsPower(p=1.0))
        assert list(series.excluded) == [0, 0, 1, 1, 1]
        # group j=0 keeps only level 0 from t=2 on: values 2, 3, 4
        # group j=1 keeps both levels: means 3.5, 4.5, 5.5
        assert series.lower[2] == 2.0 and series.upper[2] == 3.5
        assert series.lower[4] == 4.0 and series.upper[4] == 5.5

    def test_majority_explosion_is_fatal(self):
        ens = _hand_ensemble({(0, 1): 1, (1, 1): 2}, m=3, n=2)
        with pytest.raises(ExcessiveExplosions):
            estimate_series(ens, AbsPower(p=1.0))

    def test_all_paths_exploded(self):
        ens = _hand_ensemble({(0, 0): 1, (0, 1): 1}, m=1, n=2)
        with pytest.raises(AllPathsExploded):
            estimate_series(ens, AbsPower(p=1.0))
