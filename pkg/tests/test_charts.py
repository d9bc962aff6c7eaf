"""
Tests for the MEWMA, paired one-sided EWMA and Shewhart TBE charts.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charts import (
    Decision,
    Direction,
    MewmaConfig,
    PewmaConfig,
    ShewhartTbeConfig,
    mewma_init,
    mewma_scan,
    mewma_update,
    pewma_init,
    pewma_scan_stream,
    pewma_update,
    pewma_update_stream,
    shewhart_tbe_update,
)
from errors import ConfigError
from model_gumbel import MODEL_PRESETS, TbePair, moments

THETA0 = (1.0, 2.0)


def _mewma(lam=0.1, limit_h=1.0, covariance=((1.0, 0.0), (0.0, 4.0))):
    return MewmaConfig(lam=lam, mean=np.array(THETA0), covariance=np.array(covariance), limit_h=limit_h)


# --- MEWMA ---

def test_mewma_hand_evaluated_update():
    """
    HAPPY PATH: lambda = 0.1, Sigma = diag(1, 4), y = (2, 2) gives z = (0.1, 0) and E^2 = 0.19.
    """
    # 1. Arrange
    config = _mewma(limit_h=1.0)
    state = mewma_init(config)

    # 2. Act
    state, decision = mewma_update(state, config, TbePair(2.0, 2.0))

    # 3. Assert
    np.testing.assert_allclose(state.z, [0.1, 0.0], atol=1e-15)
    assert decision.statistic == pytest.approx(0.19, rel=1e-12)
    assert not decision.signaled
    assert state.samples_seen == 1


def test_mewma_centered_observation_gives_zero():
    config = _mewma()
    _, decision = mewma_update(mewma_init(config), config, THETA0)

    assert decision.statistic == 0.0
    assert not decision.signaled


def test_mewma_signals_above_limit():
    """
    HAPPY PATH: the signal fires when E^2 exceeds h.
    """
    config = _mewma(limit_h=0.18)
    _, decision = mewma_update(mewma_init(config), config, (2.0, 2.0))

    assert decision.signaled
    assert decision.source is None


def test_mewma_lambda_one_is_hotelling_statistic():
    """
    HAPPY PATH: with lambda = 1 the statistic is (y - mu)' Sigma^-1 (y - mu).
    """
    summary = moments(MODEL_PRESETS[2])
    config = MewmaConfig(lam=1.0, mean=summary.mean, covariance=summary.covariance, limit_h=1e9)
    inverse = np.linalg.inv(summary.covariance)
    rng = np.random.default_rng(0)

    for y in rng.exponential(scale=[1.0, 2.0], size=(1000, 2)):
        _, decision = mewma_update(mewma_init(config), config, y)
        d = y - summary.mean
        assert decision.statistic == pytest.approx(d @ inverse @ d, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(
    y1=st.floats(0.0, 20.0),
    y2=st.floats(0.0, 20.0),
    lam=st.floats(0.05, 1.0),
    rho=st.floats(-0.9, 0.9),
)
def test_mewma_statistic_is_nonnegative_and_permutation_symmetric(y1, y2, lam, rho):
    cov = np.array([[1.0, rho * 2.0], [rho * 2.0, 4.0]])
    config = MewmaConfig(lam=lam, mean=np.array([1.0, 2.0]), covariance=cov, limit_h=10.0)
    swapped = MewmaConfig(lam=lam, mean=np.array([2.0, 1.0]), covariance=cov[::-1, ::-1], limit_h=10.0)

    _, decision = mewma_update(mewma_init(config), config, (y1, y2))
    _, mirrored = mewma_update(mewma_init(swapped), swapped, (y2, y1))

    assert decision.statistic >= 0.0
    assert decision.statistic == pytest.approx(mirrored.statistic, rel=1e-9, abs=1e-12)


def test_mewma_scan_matches_sequential_updates():
    """
    HAPPY PATH: the block scan reproduces the one-at-a-time recursion.
    """
    config = MewmaConfig.from_model(MODEL_PRESETS[2], lam=0.2, limit_h=1e9)
    ys = np.random.default_rng(4).exponential(scale=[1.0, 2.0], size=(300, 2))

    state = mewma_init(config)
    for y in ys[:150]:
        state, _ = mewma_update(state, config, y)
    scanned, hit = mewma_scan(state, config, ys[150:])
    sequential = state
    for y in ys[150:]:
        sequential, _ = mewma_update(sequential, config, y)

    assert hit is None
    np.testing.assert_allclose(scanned.z, sequential.z, rtol=1e-10, atol=1e-12)
    assert scanned.samples_seen == sequential.samples_seen == 300


def test_mewma_scan_stops_at_first_signal():
    config = MewmaConfig.from_model(MODEL_PRESETS[1], lam=0.2, limit_h=4.0)
    ys = np.random.default_rng(9).exponential(scale=[1.0, 2.0], size=(500, 2))

    state = mewma_init(config)
    first = None
    for i, y in enumerate(ys):
        state, decision = mewma_update(state, config, y)
        if decision.signaled:
            first = i
            break
    scanned, hit = mewma_scan(mewma_init(config), config, ys)

    assert first is not None
    assert hit == first
    assert scanned.samples_seen == first + 1
    assert scanned.last_stat == pytest.approx(decision.statistic, rel=1e-10)


def test_mewma_scan_of_empty_block_is_a_no_op():
    """
    EDGE CASE: nothing to scan.
    """
    config = _mewma()
    state = mewma_init(config)

    scanned, hit = mewma_scan(state, config, np.empty((0, 2)))

    assert scanned is state
    assert hit is None


@pytest.mark.parametrize(
    "covariance",
    [((1.0, 1.0), (1.0, 1.0)), ((1.0, 2.0), (2.0, 1.0)), ((1.0, 0.5), (0.2, 1.0))],
)
def test_mewma_rejects_bad_covariance(covariance):
    """
    EDGE CASE: singular, indefinite and asymmetric matrices.
    """
    with pytest.raises(ConfigError):
        _mewma(covariance=covariance)


@pytest.mark.parametrize("lam,limit_h", [(0.0, 1.0), (1.5, 1.0), (0.1, 0.0)])
def test_mewma_rejects_bad_parameters(lam, limit_h):
    with pytest.raises(ConfigError):
        _mewma(lam=lam, limit_h=limit_h)


# --- paired one-sided EWMA ---

def test_pewma_upper_hand_evaluated_update():
    """
    HAPPY PATH: z1 = max(1, 0.5 + 0.9) = 1.4 and z2 stays clamped at 2.
    """
    quiet = PewmaConfig(lam=0.1, theta0=THETA0, direction=Direction.UPPER, limits=(1.5, 3.0))
    loud = PewmaConfig(lam=0.1, theta0=THETA0, direction=Direction.UPPER, limits=(1.3, 3.0))

    state, decision = pewma_update(pewma_init(quiet), quiet, (5.0, 2.0))
    _, alarm = pewma_update(pewma_init(loud), loud, (5.0, 2.0))

    assert state.z == pytest.approx((1.4, 2.0))
    assert not decision.signaled
    assert alarm.signaled
    assert alarm.source == 0
    assert alarm.statistic == pytest.approx(1.4)


def test_pewma_lower_hand_evaluated_update():
    config = PewmaConfig(lam=0.1, theta0=THETA0, direction=Direction.LOWER, limits=(0.5, 1.0))

    state, decision = pewma_update(pewma_init(config), config, (0.0, 0.0))

    assert state.z == pytest.approx((0.9, 1.8))
    assert not decision.signaled


def test_pewma_in_control_fixed_point():
    config = PewmaConfig(lam=0.1, theta0=THETA0, direction=Direction.UPPER, limits=(1.5, 3.0))

    state, decision = pewma_update(pewma_init(config), config, THETA0)

    assert state.z == pytest.approx((1.0, 2.0))
    assert not decision.signaled


def test_pewma_reports_lowest_index_when_both_streams_cross():
    """
    EDGE CASE: simultaneous crossings are attributed to stream 0.
    """
    config = PewmaConfig(lam=1.0, theta0=THETA0, direction=Direction.UPPER, limits=(1.5, 3.0))

    _, decision = pewma_update(pewma_init(config), config, (10.0, 10.0))

    assert decision.signaled
    assert decision.source == 0


@settings(max_examples=100, deadline=None)
@given(
    lam=st.floats(0.01, 1.0),
    scale=st.floats(1.01, 5.0),
    direction=st.sampled_from(list(Direction)),
    n=st.integers(1, 200),
)
def test_pewma_fed_in_control_means_never_signals(lam, scale, direction, n):
    scale = scale if direction is Direction.UPPER else 1.0 / scale
    config = PewmaConfig.from_scale(THETA0, lam, direction, scale)
    state = pewma_init(config)

    for _ in range(n):
        state, decision = pewma_update(state, config, THETA0)
        assert not decision.signaled


@settings(max_examples=100, deadline=None)
@given(
    lam=st.floats(0.01, 1.0),
    ys=st.lists(st.tuples(st.floats(0.0, 50.0), st.floats(0.0, 50.0)), min_size=1, max_size=50),
)
def test_pewma_statistics_stay_on_their_side_of_the_means(lam, ys):
    upper = PewmaConfig.from_scale(THETA0, lam, Direction.UPPER, 1e6)
    lower = PewmaConfig.from_scale(THETA0, lam, Direction.LOWER, 1e-9)
    up_state, low_state = pewma_init(upper), pewma_init(lower)

    for y in ys:
        up_state, _ = pewma_update(up_state, upper, y)
        low_state, _ = pewma_update(low_state, lower, y)
        assert up_state.z[0] >= 1.0 and up_state.z[1] >= 2.0
        assert low_state.z[0] <= 1.0 and low_state.z[1] <= 2.0


@settings(max_examples=100, deadline=None)
@given(
    lam=st.floats(0.05, 1.0),
    c=st.floats(0.1, 10.0),
    ys=st.lists(st.floats(0.0, 20.0), min_size=1, max_size=60),
)
def test_pewma_signals_are_scale_equivariant(lam, c, ys):
    """
    Scaling observations, means and limits of a stream by c leaves its signals unchanged.
    """
    base = PewmaConfig(lam=lam, theta0=(1.0, 2.0), direction=Direction.UPPER, limits=(1.7, 3.4))
    scaled = PewmaConfig(lam=lam, theta0=(c, 2.0), direction=Direction.UPPER, limits=(1.7 * c, 3.4))

    _, hit = pewma_scan_stream(1.0, base, 0, ys)
    _, scaled_hit = pewma_scan_stream(c, scaled, 0, [c * y for y in ys])

    # equal up to rounding right at the limit
    if hit != scaled_hit:
        first = min(k for k in (hit, scaled_hit) if k is not None)
        z = 1.0
        for y in ys[: first + 1]:
            z = base.step(0, z, y)
        assert z == pytest.approx(1.7, rel=1e-9)
    else:
        assert hit == scaled_hit


def test_pewma_stream_update_matches_scan():
    config = PewmaConfig.from_scale(THETA0, 0.2, Direction.LOWER, 0.5)
    values = list(np.random.default_rng(8).exponential(2.0, size=400))

    state = pewma_init(config)
    first = None
    for k, y in enumerate(values):
        state, decision = pewma_update_stream(state, config, 1, y)
        if decision.signaled:
            first = k
            break
    z, hit = pewma_scan_stream(2.0, config, 1, values)

    assert hit == first
    assert state.z[0] == 1.0
    if hit is not None:
        assert decision.source == 1
        assert z == pytest.approx(state.z[1])


@pytest.mark.parametrize(
    "direction,limits",
    [(Direction.LOWER, (1.0, 1.0)), (Direction.LOWER, (0.0, 1.0)), (Direction.UPPER, (1.0, 3.0)), (Direction.UPPER, (2.0, 1.5))],
)
def test_pewma_rejects_limits_on_the_wrong_side(direction, limits):
    """
    EDGE CASE: lower limits need 0 < L < theta, upper limits need U > theta.
    """
    with pytest.raises(ConfigError):
        PewmaConfig(lam=0.1, theta0=THETA0, direction=direction, limits=limits)


def test_pewma_proportional_limits():
    config = PewmaConfig.from_scale(THETA0, 0.1, Direction.LOWER, 0.5685)

    np.testing.assert_allclose(config.limits, [0.5685, 1.137])
    np.testing.assert_allclose(config.with_scale(0.6).limits, [0.6, 1.2])


def test_stream_update_rejects_unknown_stream():
    config = PewmaConfig.from_scale(THETA0, 0.1, Direction.UPPER, 2.0)

    with pytest.raises(ConfigError):
        pewma_update_stream(pewma_init(config), config, 2, 1.0)


def test_decision_with_source_must_signal():
    with pytest.raises(ConfigError):
        Decision(signaled=False, statistic=1.0, source=0)


# --- Shewhart TBE ---

def test_shewhart_interior_and_upper_crossing():
    """
    HAPPY PATH: limits (0.1, 5) pass y = 1 and flag y = 6 on the tested stream.
    """
    config = ShewhartTbeConfig(lower=(0.1, 0.1), upper=(5.0, 5.0))

    quiet = shewhart_tbe_update(config, 0, 1.0)
    alarm = shewhart_tbe_update(config, 1, 6.0)
    early = shewhart_tbe_update(config, 0, 0.05)

    assert not quiet.signaled
    assert alarm.signaled and alarm.source == 1 and alarm.statistic == 6.0
    assert early.signaled and early.source == 0


def test_shewhart_signal_probability_of_exponential_stream():
    config = ShewhartTbeConfig(lower=(0.0,), upper=(3.0,))

    assert config.signal_probability(0, 1.0) == pytest.approx(math.exp(-3.0))


@pytest.mark.parametrize("stream,y", [(2, 1.0), (-1, 1.0), (0, -1.0)])
def test_shewhart_rejects_bad_input(stream, y):
    """
    EDGE CASE: unknown stream index or a negative time.
    """
    config = ShewhartTbeConfig(lower=(0.1, 0.1), upper=(5.0, 5.0))

    with pytest.raises(ConfigError):
        shewhart_tbe_update(config, stream, y)


@pytest.mark.parametrize("lower,upper", [((1.0,), (1.0,)), ((0.1, 0.2), (5.0,)), ((), ()), ((-1.0,), (2.0,))])
def test_shewhart_rejects_bad_limits(lower, upper):
    with pytest.raises(ConfigError):
        ShewhartTbeConfig(lower=lower, upper=upper)
