"""
Tests for Monte Carlo ATS estimation and control-limit calibration.
"""

import math

import numpy as np
import pytest

from charts import Direction, MewmaConfig, PewmaConfig, ShewhartTbeConfig
from errors import CalibrationError, ConfigError, EstimateInvalidError
from model_gumbel import MODEL_PRESETS, GumbelBveParams
from scenarios import NULL_SHIFT, AlarmClock, PointProcessScenario, ShiftSpec, VectorScenario
from simulation import (
    ChartFamily,
    Mode,
    SteadyStateConfig,
    ats_wald_oracle,
    build_chart,
    calibrate,
    estimate_ats,
    run_rng,
)

MODEL_1 = MODEL_PRESETS[1]


def _threshold_chart(scale=2.0):
    """lambda = 1: each complete vector signals independently with probability 1 - (1 - e^-scale)^2 under model 1."""
    return PewmaConfig.from_scale(MODEL_1.theta, 1.0, Direction.UPPER, scale)


def _vector_signal_probability(scale=2.0):
    return 1.0 - (1.0 - math.exp(-scale)) ** 2


def test_first_vector_signal_gives_mean_of_the_maximum():
    """
    HAPPY PATH: a chart that always signals on the first vector has ATS = E[max(Y1, Y2)] = 1.5 for unit means.
    """
    # 1. Arrange
    params = GumbelBveParams(1.0, 1.0, 1.0)
    chart = MewmaConfig.from_model(params, lam=1.0, limit_h=1e-9)

    # 2. Act
    estimate = estimate_ats(VectorScenario(params), chart, Mode.IN_CONTROL, n_reps=20_000, base_seed=1)

    # 3. Assert
    assert estimate.mean_ats == pytest.approx(1.5, abs=4 * estimate.std_error)
    assert estimate.mean_run_length == 1.0
    assert estimate.n_censored == 0
    assert estimate.n_discarded == 0


def test_single_vector_threshold_chart_follows_wald_identity():
    """
    HAPPY PATH: lambda = 1 with U = 1.5 theta gives ATS = E[max] / p with p = 1 - (1 - e^-1.5)^2.
    """
    chart = PewmaConfig.from_scale((1.0, 2.0), 1.0, Direction.UPPER, 1.5)
    p = 1.0 - (1.0 - math.exp(-1.5)) ** 2
    expected = (1.0 + 2.0 - 2.0 / 3.0) / p

    estimate = estimate_ats(VectorScenario(MODEL_1), chart, Mode.ZERO_STATE, n_reps=20_000, base_seed=3)

    assert estimate.mean_ats == pytest.approx(expected, abs=4 * estimate.std_error)
    assert estimate.mean_run_length == pytest.approx(1.0 / p, rel=0.03)


def test_point_process_ats_matches_wald_oracle():
    """
    HAPPY PATH: one exponential stream under limits (0, 2) has ATS = e^2.
    """
    chart = ShewhartTbeConfig(lower=(0.0,), upper=(2.0,))

    estimate = estimate_ats(PointProcessScenario((1.0,), (1.0,)), chart, Mode.IN_CONTROL, n_reps=20_000, base_seed=2)

    assert ats_wald_oracle(1.0, 0.0, 2.0) == pytest.approx(math.exp(2.0))
    assert estimate.mean_ats == pytest.approx(math.exp(2.0), abs=4 * estimate.std_error)


def test_wald_oracle_with_two_sided_limits():
    chart = ShewhartTbeConfig(lower=(0.1,), upper=(6.0,))

    estimate = estimate_ats(PointProcessScenario((2.0,), (1.0,)), chart, Mode.IN_CONTROL, n_reps=20_000, base_seed=8)

    expected = ats_wald_oracle(2.0, 0.1, 6.0)
    assert expected == pytest.approx(2.0 / chart.signal_probability(0, 2.0))
    assert estimate.mean_ats == pytest.approx(expected, abs=4 * estimate.std_error)


def test_single_run_has_undefined_standard_error():
    """
    EDGE CASE: n_reps = 1.
    """
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=3.0)

    estimate = estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=1)

    assert estimate.n_runs == 1
    assert math.isnan(estimate.std_error)
    assert not estimate.std_error_defined


def test_estimate_rejects_zero_runs():
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=3.0)

    with pytest.raises(ConfigError):
        estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=0)


@pytest.mark.parametrize("workers", [2, 8])
def test_estimate_is_identical_for_any_number_of_workers(workers):
    """
    HAPPY PATH: each run's seed depends only on (seed, run index).
    """
    chart = MewmaConfig.from_model(MODEL_PRESETS[2], lam=0.2, limit_h=4.0)
    scenario = VectorScenario(MODEL_PRESETS[2], ShiftSpec(0.5, 1.0))

    serial = estimate_ats(scenario, chart, Mode.STEADY_STATE, n_reps=2_500, base_seed=4, workers=1)
    parallel = estimate_ats(scenario, chart, Mode.STEADY_STATE, n_reps=2_500, base_seed=4, workers=workers)

    assert serial == parallel


def test_run_rng_streams_are_distinct():
    a = run_rng(0, 0).random(4)
    b = run_rng(0, 1).random(4)
    c = run_rng(0, 0, attempt=1).random(4)

    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(a, run_rng(0, 0).random(4))


def test_in_control_ats_increases_with_the_limit():
    """
    HAPPY PATH: under common random numbers a wider limit never signals earlier.
    """
    narrow = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=5.0)
    wide = narrow.with_limit(10.0)

    low = estimate_ats(VectorScenario(MODEL_1), narrow, Mode.IN_CONTROL, n_reps=2_000, base_seed=6)
    high = estimate_ats(VectorScenario(MODEL_1), wide, Mode.IN_CONTROL, n_reps=2_000, base_seed=6)

    assert high.mean_ats > low.mean_ats


def test_steady_state_discards_burn_in_false_alarms():
    """
    HAPPY PATH: with a tight limit some runs alarm during the burn-in and are regenerated.
    """
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=3.0)
    scenario = VectorScenario(MODEL_1, ShiftSpec(2.0, 2.0))

    estimate = estimate_ats(
        scenario, chart, Mode.STEADY_STATE, n_reps=200, base_seed=0, steady=SteadyStateConfig(burn_in=10),
    )

    assert estimate.n_discarded > 0
    assert estimate.n_runs == 200
    assert estimate.mean_ats > 0


def test_too_many_censored_runs_invalidate_the_estimate():
    """
    EDGE CASE: every run hits the cap; the first censored run already exceeds the allowance.
    """
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=1e12)

    with pytest.raises(EstimateInvalidError) as excinfo:
        estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=10, cap=100)

    assert excinfo.value.estimate.n_censored == 1
    assert excinfo.value.estimate.n_runs == 1
    assert excinfo.value.exit_code == 5


@pytest.mark.parametrize("workers", [1, 2])
def test_censored_runs_stop_the_estimate_once_over_the_allowance(workers):
    """
    EDGE CASE: with half the runs allowed to be censored, the sixth censored run of ten stops the estimate.
    """
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=1e12)

    with pytest.raises(EstimateInvalidError) as excinfo:
        estimate_ats(
            VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=10, cap=100,
            max_censored_fraction=0.5, workers=workers,
        )

    assert excinfo.value.estimate.n_censored == 6
    assert excinfo.value.estimate.n_runs == 6


def test_null_shift_from_the_start_matches_the_in_control_ats():
    """
    HAPPY PATH: a null shift at item 0 is the in-control process; independent seeds agree within sampling error.
    """
    chart = MewmaConfig.from_model(MODEL_1, lam=0.2, limit_h=5.0)

    shifted = estimate_ats(VectorScenario(MODEL_1, NULL_SHIFT), chart, Mode.ZERO_STATE, n_reps=3_000, base_seed=10)
    in_control = estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=3_000, base_seed=11)

    z = (shifted.mean_ats - in_control.mean_ats) / math.hypot(shifted.std_error, in_control.std_error)
    assert abs(z) < 4.0


def test_discarded_share_matches_the_burn_in_false_alarm_probability():
    """
    HAPPY PATH: an attempt is discarded when one of the 3 burn-in vectors signals, probability 1 - (1 - p)^3.
    """
    # Arrange
    burn_in = 3
    expected = 1.0 - (1.0 - _vector_signal_probability()) ** burn_in

    # Act
    estimate = estimate_ats(
        VectorScenario(MODEL_1, NULL_SHIFT), _threshold_chart(), Mode.STEADY_STATE, n_reps=3_000, base_seed=12,
        steady=SteadyStateConfig(burn_in=burn_in),
    )

    # Assert
    attempts = estimate.n_runs + estimate.n_discarded
    share = estimate.n_discarded / attempts
    assert share == pytest.approx(expected, abs=4 * math.sqrt(expected * (1 - expected) / attempts))


def test_steady_state_run_length_counts_from_the_change():
    """
    HAPPY PATH: after a 5-vector burn-in the ARL is the geometric mean 1 / p, not 5 + 1 / p.
    """
    p = _vector_signal_probability(3.0)

    estimate = estimate_ats(
        VectorScenario(MODEL_1, NULL_SHIFT), _threshold_chart(3.0), Mode.STEADY_STATE, n_reps=3_000, base_seed=13,
        steady=SteadyStateConfig(burn_in=5),
    )

    sd = math.sqrt(1.0 - p) / p
    assert estimate.mean_run_length == pytest.approx(1.0 / p, abs=4 * sd / math.sqrt(estimate.n_runs))


def test_standard_error_shrinks_with_the_square_root_of_the_runs():
    chart = _threshold_chart()

    small = estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=1_000, base_seed=14)
    large = estimate_ats(VectorScenario(MODEL_1), chart, Mode.IN_CONTROL, n_reps=16_000, base_seed=14)

    assert small.std_error / large.std_error == pytest.approx(4.0, rel=0.2)


@pytest.mark.parametrize(
    "direction,scales",
    [(Direction.LOWER, (0.7, 0.6, 0.5)), (Direction.UPPER, (1.3, 1.5, 1.7))],
)
def test_paired_chart_in_control_ats_grows_as_the_limits_widen(direction, scales):
    """
    HAPPY PATH: under common random numbers the ATS is nonincreasing in c for lower charts
    and nondecreasing in c for upper charts.
    """
    ats = [
        estimate_ats(
            VectorScenario(MODEL_1), PewmaConfig.from_scale(MODEL_1.theta, 0.2, direction, c),
            Mode.IN_CONTROL, n_reps=500, base_seed=15,
        ).mean_ats
        for c in scales
    ]

    assert ats[0] <= ats[1] <= ats[2]


def test_steady_state_config_validation():
    with pytest.raises(ConfigError):
        SteadyStateConfig(burn_in=-1)
    with pytest.raises(ConfigError):
        SteadyStateConfig(discard_policy="keep")


def test_build_chart_dispatches_on_family():
    mewma = build_chart(ChartFamily.MEWMA, MODEL_1, 0.1, 6.9)
    pewma = build_chart("pewma", MODEL_1, 0.1, 0.5685, Direction.LOWER)

    assert mewma.limit_h == 6.9
    np.testing.assert_allclose(pewma.limits, [0.5685, 1.137])
    with pytest.raises(ConfigError):
        build_chart(ChartFamily.SHEWHART, MODEL_1, 0.1, 1.0)


@pytest.mark.slow
def test_mewma_calibration_reaches_the_target():
    """
    HAPPY PATH: bisection on h lands near the requested in-control ATS.
    """
    # 1. Arrange
    target = 20.0

    # 2. Act
    result = calibrate(
        MODEL_1, ChartFamily.MEWMA, 0.2, target_ats0=target, rel_tol=0.05,
        reps_per_eval=2_000, n_reps=4_000, mode=Mode.IN_CONTROL,
    )

    # 3. Assert
    assert result.limit > 0
    assert result.limits == (result.limit,)
    assert result.achieved_ats0 == pytest.approx(target, rel=0.15)
    assert result.iterations == len(result.history)
    assert result.limit_spec.startswith("h=")


@pytest.mark.slow
def test_pewma_calibration_uses_proportional_limits():
    result = calibrate(
        MODEL_1, ChartFamily.PEWMA, 0.2, target_ats0=20.0, rel_tol=0.05, direction=Direction.LOWER,
        reps_per_eval=2_000, n_reps=4_000, mode=Mode.IN_CONTROL,
    )

    lower1, lower2 = result.limits
    assert 0 < lower1 < 1.0
    assert lower2 / lower1 == pytest.approx(2.0, rel=1e-9)
    assert result.achieved_ats0 == pytest.approx(20.0, rel=0.15)
    assert result.limit_spec.startswith("L1=")


@pytest.mark.slow
def test_calibration_can_start_from_a_given_limit():
    result = calibrate(
        MODEL_1, ChartFamily.PEWMA, 0.2, target_ats0=20.0, rel_tol=0.05, direction=Direction.UPPER,
        reps_per_eval=1_000, n_reps=1_000, mode=Mode.IN_CONTROL, clock=AlarmClock.PER_STREAM, initial_limit=2.0,
    )

    assert result.history[0][0] == pytest.approx(2.0)
    assert result.limit > 1.0


@pytest.mark.parametrize(
    "family,direction",
    [(ChartFamily.MEWMA, Direction.UPPER), (ChartFamily.PEWMA, Direction.UPPER), (ChartFamily.PEWMA, Direction.LOWER)],
)
def test_unreachable_target_fails_to_bracket(family, direction):
    """
    EDGE CASE: no limit gets the ATS below the mean time to the first complete vector,
    and shrinking the limit towards its boundary ends in CalibrationError.
    """
    with pytest.raises(CalibrationError) as excinfo:
        calibrate(
            MODEL_1, family, 0.2, target_ats0=0.01, direction=direction, reps_per_eval=50, n_reps=50,
            mode=Mode.IN_CONTROL,
        )

    assert excinfo.value.exit_code == 4
    assert excinfo.value.ats_range[0] > 0.01


def test_bracketing_grows_the_limit_by_a_constant_factor():
    """
    HAPPY PATH: h halves at every expansion until the ATS falls below the target.
    """
    # Arrange
    target = 5.0

    # Act
    result = calibrate(
        MODEL_1, ChartFamily.MEWMA, 0.2, target_ats0=target, rel_tol=0.1, reps_per_eval=300, n_reps=300,
        mode=Mode.IN_CONTROL, initial_limit=8.0,
    )

    # Assert
    limits = [h for h, _ in result.history]
    first_below = next(i for i, (_, ats) in enumerate(result.history) if ats <= target)
    assert first_below >= 1
    for previous, current in zip(limits[:first_below], limits[1 : first_below + 1]):
        assert current / previous == pytest.approx(0.5)


@pytest.mark.parametrize("target,rel_tol", [(0.0, 0.01), (-5.0, 0.01), (200.0, 0.0), (200.0, 0.5)])
def test_calibration_rejects_bad_settings(target, rel_tol):
    with pytest.raises(ConfigError):
        calibrate(MODEL_1, ChartFamily.MEWMA, 0.1, target_ats0=target, rel_tol=rel_tol)


@pytest.mark.parametrize(
    "family,direction,limit",
    [(ChartFamily.MEWMA, Direction.UPPER, 0.0), (ChartFamily.PEWMA, Direction.UPPER, 0.9), (ChartFamily.PEWMA, Direction.LOWER, 1.2)],
)
def test_calibration_rejects_invalid_starting_limit(family, direction, limit):
    with pytest.raises(ConfigError):
        calibrate(MODEL_1, family, 0.1, direction=direction, initial_limit=limit)
