import math

import pytest

from gsdde import registry
from gsdde.exprlang import parse_expr as e
from gsdde.model import (
    DelayDerivativeExceedsBound,
    DelayOutOfRange,
    DelaySpec,
    DeltaDotBoundNotLessThanOne,
    GSDDEModel,
    InitialHistory,
    InvalidCoefficient,
    NonDeterministicH,
    NonPositiveTau,
    ValidatedModel,
    VolatilityBounds,
    VolatilityOrderViolation,
    validate_model,
)
from gsdde.scenario import TimeGrid


def _benchmark(**overrides):
    kwargs = dict(
        drift_f=e("-x^3 - y"),
        qv_coeff_g=e("0"),
        noise_h=e("0.5*exp(-t)"),
        delay=DelaySpec(tau=0.01, delta=e("0.01"), delta_dot_bound=0.1),
        vol=VolatilityBounds(0.5, 1.0),
        growth_K=1.0,
        growth_q1=3.0,
        growth_q2=0.0,
    )
    kwargs.update(overrides)
    return GSDDEModel(**kwargs)


HISTORY = InitialHistory(eta=e("2 + sin(u)"))


class TestInvariants:
    def test_benchmark_model_is_valid(self):
        vm = validate_model(*registry.example41())
        assert isinstance(vm, ValidatedModel)
        assert vm.g_is_zero

    def test_validation_is_idempotent(self):
        vm = validate_model(*registry.example41())
        assert validate_model(vm, None) is vm

    def test_volatility_order_violation(self):
        with pytest.raises(VolatilityOrderViolation):
            VolatilityBounds(2.0, 1.0)

    def test_volatility_must_be_positive(self):
        with pytest.raises(VolatilityOrderViolation):
            VolatilityBounds(0.0, 1.0)
        with pytest.raises(VolatilityOrderViolation):
            VolatilityBounds(1.0, math.inf)

    def test_delay_exceeding_tau(self):
        model = _benchmark(delay=DelaySpec(tau=0.01, delta=e("0.02"), delta_dot_bound=0.1))
        with pytest.raises(DelayOutOfRange):
            validate_model(model, HISTORY)

    def test_negative_delay(self):
        model = _benchmark(delay=DelaySpec(tau=0.01, delta=e("-0.001"), delta_dot_bound=0.1))
        with pytest.raises(DelayOutOfRange):
            validate_model(model, HISTORY)

    def test_non_positive_tau(self):
        with pytest.raises(NonPositiveTau):
            DelaySpec(tau=0.0, delta=e("0"), delta_dot_bound=0.1)
        with pytest.raises(NonPositiveTau):
            DelaySpec(tau=-1.0, delta=e("0"), delta_dot_bound=0.1)

    def test_delta_dot_bound_must_be_below_one(self):
        with pytest.raises(DeltaDotBoundNotLessThanOne):
            DelaySpec(tau=0.01, delta=e("0.01"), delta_dot_bound=1.0)

    def test_h_must_be_deterministic(self):
        with pytest.raises(NonDeterministicH):
            _benchmark(noise_h=e("0.5*x"))

    def test_drift_variable_set(self):
        with pytest.raises(InvalidCoefficient):
            _benchmark(drift_f=e("-x^3 - u"))

    def test_history_variable_set(self):
        with pytest.raises(InvalidCoefficient):
            InitialHistory(eta=e("2 + sin(t)"))

    def test_delta_variable_set(self):
        with pytest.raises(InvalidCoefficient):
            DelaySpec(tau=0.01, delta=e("0.01*x"), delta_dot_bound=0.1)

    def test_declared_slope_bound_is_spot_checked(self):
        delay = DelaySpec(tau=0.25, delta=e("0.1 + 0.1*sin(3*t)"), delta_dot_bound=0.1)
        model = _benchmark(delay=delay)
        with pytest.raises(DelayDerivativeExceedsBound):
            validate_model(model, HISTORY)

    def test_consistent_slope_bound_passes(self):
        delay = DelaySpec(tau=0.25, delta=e("0.1 + 0.1*sin(3*t)"), delta_dot_bound=0.3)
        vm = validate_model(_benchmark(delay=delay), HISTORY)
        assert isinstance(vm, ValidatedModel)

    def test_history_must_be_finite(self):
        bad = InitialHistory(eta=e("1/u"))  # not finite at u = 0
        with pytest.raises(InvalidCoefficient):
            validate_model(_benchmark(), bad)


class TestValidatedModel:
    def test_delay_in_range_on_grid(self):
        grid = TimeGrid(horizon=1.0, steps=100, tau=0.01)
        vm = validate_model(*registry.example41(), grid)
        for t in grid.times():
            d = vm.delta(float(t))
            assert 0.0 <= d <= vm.tau
            assert float(t) - d >= -vm.tau

    def test_history_extension_rule(self):
        vm = validate_model(*registry.example41(delta=0.01))
        tau = vm.tau
        # frozen at eta(-tau) on [-2 tau, -tau)
        assert vm.history_value(-1.5 * tau) == vm.eta(-tau)
        assert vm.history_value(-tau) == vm.eta(-tau)
        assert vm.history_value(-0.005) == 2.0 + math.sin(-0.005)

    def test_history_bounds(self):
        vm = validate_model(*registry.example41(delta=0.01))
        with pytest.raises(ValueError):
            vm.history_value(0.5)
        with pytest.raises(ValueError):
            vm.history_value(-3.0 * vm.tau)

    def test_registry_names(self):
        assert set(registry.MODELS) == {"example41", "linear-ou"}
        with pytest.raises(KeyError):
            registry.get_model("nope")
