import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from passivity_lab.errors import DimensionMismatchError, IllPosedAtSampleError
from passivity_lab.passivity import random_bandlimited
from passivity_lab.signals import SampledSignal, constant, inner, inner_truncated, l2_norm, truncate
from passivity_lab.systems import (
    Cascade,
    LtiStateSpace,
    NegFeedbackWithGain,
    ScalarGain,
    SolverOptions,
    StaticMap,
    Sum,
    dyadic_horizons,
    identity,
    lipschitz_gain_estimate,
    lti_frequency_response,
    static_map,
)

DT = 0.005


def tf(num, den, **kw):
    return LtiStateSpace.from_tf(num, den, **kw)


def rand_signal(seed, N=4000, amp=1.0, channels=1):
    rng = np.random.default_rng(seed)
    t = np.arange(N) * DT
    return SampledSignal(np.vstack([random_bandlimited(rng, t, (0.1, 30.0), 6, amp)
                                    for _ in range(channels)]), DT)


# -------------------------------------------------------------- LTI blocks


def test_static_transfer_function_has_no_states():
    op = tf([5.0], [1.0])
    assert op.states == 0
    assert op.is_stable()
    u = rand_signal(0)
    np.testing.assert_allclose(op.apply(u).values, 5.0 * u.values)


def test_leading_zeros_trimmed_and_improper_rejected():
    assert tf([0.0, 0.0, 1.0], [0.0, 1.0, 1.0]).states == 1
    with pytest.raises(ValueError):
        tf([1.0, 0.0, 0.0], [1.0, 1.0])


def test_point_sampled_step_response_is_exact():
    op = tf([1.0], [1.0, 1.0], sampling="point")
    y = op.apply(constant(1.0, 2000, DT))
    t = np.arange(2000) * DT
    np.testing.assert_allclose(y.values[0], 1.0 - np.exp(-t), atol=1e-12)


def test_average_sampling_outputs_cell_means():
    op = tf([1.0], [1.0, 1.0])
    y = op.apply(constant(1.0, 2000, DT)).values[0]
    t = np.arange(2000) * DT
    # mean of 1 - exp(-t) over [t_k, t_k + dt)
    exact = 1.0 - (np.exp(-t) - np.exp(-(t + DT))) / DT
    np.testing.assert_allclose(y, exact, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_average_sampling_keeps_positive_real_block_passive(seed):
    op = tf([1.0], [1.0, 1.0])
    u = rand_signal(seed, amp=3.0)
    y = op.apply(u)
    for T in dyadic_horizons(u.horizon):
        assert inner_truncated(u, y, T) >= -1e-12


def test_frequency_response_matches_transfer_function():
    op = tf([1.0, 2.0], [1.0, 1.0])
    w = np.logspace(-2, 2, 9)
    G = lti_frequency_response(op, w)[:, 0, 0]
    np.testing.assert_allclose(G, (1j * w + 2) / (1j * w + 1), rtol=1e-12)


def test_lti_is_causal():
    op = tf([1.0, -1.0], [1.0, 2.0])
    u = rand_signal(3)
    T = 7.5
    np.testing.assert_allclose(truncate(op.apply(truncate(u, T)), T).values,
                               truncate(op.apply(u), T).values, atol=1e-14)


def test_mimo_state_space_shapes():
    op = LtiStateSpace(-np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    assert (op.input_dim, op.output_dim) == (2, 2)
    with pytest.raises(DimensionMismatchError):
        op.apply(rand_signal(0))


def test_nonzero_initial_state_is_not_time_invariant():
    op = LtiStateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], x0=[1.0])
    assert not op.time_invariant
    y = op.apply(constant(0.0, 400, DT, ))
    assert y.values[0, 0] > 0.9


# -------------------------------------------------------------- memoryless blocks


@pytest.mark.parametrize("name,params,w,expected", [
    ("saturation", {"level": 1.0}, [-3.0, 0.5, 2.0], [-1.0, 0.5, 1.0]),
    ("cubic", {"a": 1.0, "b": 0.5}, [-2.0, 0.0, 1.0], [-6.0, 0.0, 1.5]),
    ("deadzone", {"width": 0.5}, [-2.0, 0.2, 1.0], [-1.5, 0.0, 0.5]),
    ("relu", {}, [-2.0, 0.0, 3.0], [0.0, 0.0, 3.0]),
])
def test_registered_maps(name, params, w, expected):
    op = static_map(name, **params)
    np.testing.assert_allclose(op.apply(SampledSignal(w, 1.0)).values[0], expected)


def test_unknown_static_map():
    with pytest.raises(ValueError):
        static_map("tanh")


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_registered_maps_are_sector_bounded(a, b):
    for name in ("saturation", "deadzone", "relu"):
        phi = static_map(name).memoryless_eval(np.array([[a]]))[0, 0]
        assert 0.0 <= phi * a + 1e-15
        assert abs(phi) <= abs(a) + 1e-15


def test_sum_and_cascade_match_composition():
    g1, g2 = tf([1.0], [1.0, 1.0]), tf([1.0, 2.0], [1.0, 3.0])
    u = rand_signal(4)
    np.testing.assert_allclose(Sum(g1, g2).apply(u).values,
                               (g1.apply(u) + g2.apply(u)).values, atol=1e-12)
    casc = Cascade(g1, g2)
    np.testing.assert_allclose(casc.apply(u).values, g2.apply(g1.apply(u)).values, atol=1e-12)
    # the intermediate signal is re-held, so the product transfer function agrees to O(dt)
    prod = tf(np.polymul([1.0], [1.0, 2.0]), np.polymul([1.0, 1.0], [1.0, 3.0]))
    np.testing.assert_allclose(casc.apply(u).values, prod.apply(u).values, atol=2e-3)


def test_sum_of_nonlinear_and_linear_blocks():
    sat, g = static_map("saturation"), ScalarGain(2.0)
    u = rand_signal(5, amp=3.0)
    np.testing.assert_allclose(Sum(sat, g).apply(u).values, (sat.apply(u) + g.apply(u)).values)


@pytest.mark.parametrize("k,eps", [(1.0, 0.5), (2.0, 0.1), (10.0, 1.0)])
def test_negative_feedback_of_gain(k, eps):
    op = NegFeedbackWithGain(ScalarGain(k), eps)
    u = rand_signal(6)
    np.testing.assert_allclose(op.apply(u).values, k / (1 + eps * k) * u.values, rtol=1e-12)


@pytest.mark.parametrize("name", ["saturation", "cubic", "deadzone", "relu"])
def test_negative_feedback_of_static_map_solves_implicit_equation(name):
    phi = static_map(name)
    eps = 0.5
    u = rand_signal(7, amp=3.0)
    y = NegFeedbackWithGain(phi, eps).apply(u).values
    resid = y - phi.memoryless_eval(u.values - eps * y)
    assert np.max(np.abs(resid)) < 1e-9


def test_negative_feedback_of_uncoded_map_matches_coded():
    coded = static_map("saturation")
    plain = StaticMap(lambda w: np.clip(w, -1.0, 1.0), 1.0, name="clip")
    u = rand_signal(8, amp=3.0)
    a = NegFeedbackWithGain(coded, 0.5).apply(u).values
    b = NegFeedbackWithGain(plain, 0.5).apply(u).values
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_negative_feedback_of_lti_block():
    eps = 0.5
    inner_op = tf([1.0], [1.0, 1.0])
    op = NegFeedbackWithGain(inner_op, eps)
    u = rand_signal(9)
    y = op.apply(u)
    # exact on the sampled signals
    np.testing.assert_allclose(y.values, inner_op.apply(u - eps * y).values, atol=1e-12)
    # the continuous closed loop 1/(s + 1 + eps), up to the hold of the fed-back signal
    ref = tf([1.0], [1.0, 1.0 + eps])
    np.testing.assert_allclose(y.values, ref.apply(u).values, atol=2e-3)


def test_ill_posed_feedback_raises_with_sample():
    # y = -2 (u - y) has no stable iteration and the cubic map explodes
    op = NegFeedbackWithGain(StaticMap(lambda w: -w ** 3 - 5 * w, 1.0, name="bad"), 1.0,
                             SolverOptions(max_iter=5))
    with pytest.raises(IllPosedAtSampleError) as info:
        op.apply(SampledSignal([[0.0, 3.0, 1.0]], 0.1))
    assert info.value.sample == 1


# -------------------------------------------------------------- gain estimates


def test_gain_estimate_is_labelled_lower_bound():
    est = lipschitz_gain_estimate(ScalarGain(2.0), [rand_signal(s) for s in range(3)])
    assert est.is_lower_bound
    assert est.lower_bound == pytest.approx(2.0, rel=1e-12)
    # the witness reproduces the reported ratio
    assert l2_norm(ScalarGain(2.0).apply(est.witness)) / l2_norm(est.witness) == pytest.approx(
        est.lower_bound, rel=1e-9)


def test_gain_estimate_below_hinf_norm():
    op = tf([1.0], [1.0, 1.0])
    est = lipschitz_gain_estimate(op, [rand_signal(s, amp=2.0) for s in range(4)])
    assert 0.1 < est.lower_bound <= 1.0 + 1e-12


def test_identity_and_dyadic_grid():
    assert identity(3).input_dim == 3
    hz = dyadic_horizons(16.0, 5)
    np.testing.assert_allclose(hz, [1.0, 2.0, 4.0, 8.0, 16.0])
    u = rand_signal(10)
    assert inner(u, identity().apply(u)) == pytest.approx(l2_norm(u) ** 2)
