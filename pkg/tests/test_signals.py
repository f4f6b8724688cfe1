import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from passivity_lab.signals import (
    ConformabilityError,
    HorizonExceededError,
    MisalignedShiftError,
    SampledSignal,
    SignalError,
    constant,
    extend_truncation,
    from_function,
    impulse,
    inner,
    inner_truncated,
    l2_norm,
    shift,
    stack,
    truncate,
    zeros,
)

DT = 0.01
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def signals(draw, channels=None, samples=None):
    n = channels or draw(st.integers(1, 3))
    N = samples or draw(st.integers(1, 60))
    v = draw(arrays(float, (n, N), elements=finite))
    return SampledSignal(v, DT)


@st.composite
def signal_pairs(draw):
    u = draw(signals())
    v = draw(arrays(float, u.values.shape, elements=finite))
    return u, SampledSignal(v, DT)


def horizons(sig):
    return st.integers(0, sig.samples).map(lambda k: k * DT)


# -------------------------------------------------------------- construction


def test_one_dimensional_values_become_single_channel():
    s = SampledSignal([1.0, 2.0, 3.0], 0.5)
    assert s.values.shape == (1, 3)
    assert s.horizon == pytest.approx(1.5)


@pytest.mark.parametrize("dt", [0.0, -1.0, math.inf, math.nan])
def test_bad_dt_rejected(dt):
    with pytest.raises(SignalError):
        SampledSignal([1.0], dt)


def test_nonfinite_values_rejected():
    with pytest.raises(SignalError):
        SampledSignal([1.0, math.nan], 0.1)


def test_values_are_read_only():
    s = SampledSignal([1.0, 2.0], 0.1)
    with pytest.raises(ValueError):
        s.values[0, 0] = 5.0


def test_constructor_copies_input():
    a = np.ones((1, 4))
    s = SampledSignal(a, 0.1)
    a[0, 0] = 9.0
    assert s.values[0, 0] == 1.0


def test_arithmetic_requires_conformable_signals():
    a = SampledSignal(np.ones((1, 4)), 0.1)
    with pytest.raises(ConformabilityError):
        a + SampledSignal(np.ones((1, 5)), 0.1)
    with pytest.raises(ConformabilityError):
        a + SampledSignal(np.ones((1, 4)), 0.2)


# -------------------------------------------------------------- truncation


def test_truncation_is_half_open():
    s = constant(1.0, 10, 0.1)
    kept = truncate(s, 0.5).values[0]
    # sample at t = 0.5 exactly is dropped
    np.testing.assert_array_equal(kept, [1, 1, 1, 1, 1, 0, 0, 0, 0, 0])


def test_truncation_between_samples_keeps_sample_before():
    s = constant(1.0, 10, 0.1)
    assert truncate(s, 0.45).values.sum() == 5


def test_horizon_beyond_window_rejected():
    with pytest.raises(HorizonExceededError):
        truncate(constant(1.0, 10, 0.1), 1.5)
    with pytest.raises(HorizonExceededError):
        truncate(constant(1.0, 10, 0.1), -0.1)


@given(signals(), st.data())
def test_truncation_idempotent_and_nested(s, data):
    T = data.draw(horizons(s))
    S = data.draw(horizons(s))
    np.testing.assert_array_equal(truncate(truncate(s, T), T).values, truncate(s, T).values)
    np.testing.assert_array_equal(truncate(truncate(s, T), S).values, truncate(s, min(T, S)).values)


@given(signal_pairs(), st.data())
def test_truncated_inner_matches_inner_of_truncations(pair, data):
    u, y = pair
    T = data.draw(horizons(u))
    a = inner_truncated(u, y, T)
    b = inner(truncate(u, T), truncate(y, T))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-9)


@given(signal_pairs())
def test_cauchy_schwarz(pair):
    u, y = pair
    assert abs(inner(u, y)) <= l2_norm(u) * l2_norm(y) * (1 + 1e-12) + 1e-12


@given(signals(), finite)
def test_norm_is_homogeneous(s, a):
    assert l2_norm(a * s) == pytest.approx(abs(a) * l2_norm(s), rel=1e-12, abs=1e-12)


@given(signal_pairs(), finite, finite)
def test_inner_is_bilinear(pair, a, b):
    u, y = pair
    lhs = inner(a * u + b * y, y)
    rhs = a * inner(u, y) + b * inner(y, y)
    scale = (abs(a) + abs(b) + 1) * (l2_norm(u) + l2_norm(y) + 1) ** 2
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_extend_truncation_matches_truncate():
    s = from_function(np.sin, 50, 0.1)
    np.testing.assert_array_equal(extend_truncation(s, 2.0).values, truncate(s, 2.0).values)


# -------------------------------------------------------------- shift


@given(signals(), st.data())
def test_shift_commutes_with_truncation(s, data):
    m = data.draw(st.integers(0, s.samples))
    T = data.draw(horizons(s))
    T_shifted = min(T + m * DT, s.horizon)
    lhs = truncate(shift(s, m * DT), T_shifted).values
    rhs = shift(truncate(s, T), m * DT).values
    np.testing.assert_array_equal(lhs, rhs)


def test_shift_must_be_sample_multiple():
    with pytest.raises(MisalignedShiftError):
        shift(constant(1.0, 10, 0.1), 0.05)
    with pytest.raises(MisalignedShiftError):
        shift(constant(1.0, 10, 0.1), -0.1)


def test_shift_beyond_window_gives_zero():
    assert not shift(constant(1.0, 10, 0.1), 2.0).values.any()


# -------------------------------------------------------------- helpers


@given(signals())
def test_stack_and_split_round_trip(s):
    parts = [s.channel(i) for i in range(s.channels)]
    back = stack(parts)
    np.testing.assert_array_equal(back.values, s.values)
    np.testing.assert_array_equal(back.split([1] * s.channels)[0].values, parts[0].values)


def test_split_sizes_must_add_up():
    with pytest.raises(ConformabilityError):
        zeros(3, 5, 0.1).split([1, 1])


def test_impulse_has_requested_area():
    imp = impulse(2, 20, 0.05, at=3, channel=1, area=2.0)
    assert imp.values.sum() * imp.dt == pytest.approx(2.0)
    assert imp.values[1, 3] == pytest.approx(40.0)


def test_riemann_sum_is_exact_for_held_signals():
    # held step of height 2 on [0, 1): integral of u^2 is exactly 4
    s = constant(2.0, 100, 0.01)
    assert inner(s, s) == pytest.approx(4.0, rel=1e-14)
