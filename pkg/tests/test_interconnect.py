import numpy as np
import pytest

from passivity_lab.errors import AlgebraicLoopSingularError, DimensionMismatchError, IllPosedAtSampleError
from passivity_lab.interconnect import (
    FeedbackLoop,
    closed_loop_gain,
    closed_loop_gain_e1_to_y1,
    closed_loop_passivity_map,
    loop_transform,
    output_strict_gain_bound,
    solve_feedback,
    strict_passivity_gain_bound,
)
from passivity_lab.passivity import random_bandlimited
from passivity_lab.signals import SampledSignal, inner, l2_norm, stack, zeros
from passivity_lab.systems import (
    LtiStateSpace,
    NegFeedbackWithGain,
    ScalarGain,
    SolverOptions,
    StaticMap,
    identity,
    static_map,
)

DT = 0.005


def tf(num, den):
    return LtiStateSpace.from_tf(num, den)


def rand_signal(seed, N=4000, amp=1.0):
    rng = np.random.default_rng(seed)
    t = np.arange(N) * DT
    return SampledSignal(random_bandlimited(rng, t, (0.05, 20.0), 6, amp), DT)


def plain_saturation():
    # same map as the registered one but without a kernel code
    return StaticMap(lambda w: np.clip(w, -1.0, 1.0), 1.0, name="clip")


def check_loop_equations(sol, tol=1e-9):
    np.testing.assert_allclose(sol.u1.values, (sol.e1 - sol.y2).values, atol=tol)
    np.testing.assert_allclose(sol.u2.values, (sol.e2 + sol.y1).values, atol=tol)


# -------------------------------------------------------------- solving


@pytest.mark.parametrize("k1,k2", [(1.0, 1.0), (2.0, 0.5), (0.5, 10.0)])
def test_static_gain_loop(k1, k2):
    loop = FeedbackLoop(ScalarGain(k1), ScalarGain(k2))
    e1 = rand_signal(0)
    sol = solve_feedback(loop, e1)
    np.testing.assert_allclose(sol.y1.values, k1 / (1 + k1 * k2) * e1.values, rtol=1e-12)
    assert sol.converged and sol.path == "linear"


def test_linear_loop_blocks_reproduce_their_own_outputs():
    g1, g2 = tf([1.0], [1.0, 1.0]), tf([1.0, 2.0], [1.0, 1.0])
    sol = solve_feedback(FeedbackLoop(g1, g2), rand_signal(1), rand_signal(2))
    check_loop_equations(sol)
    np.testing.assert_allclose(sol.y1.values, g1.apply(sol.u1).values, atol=1e-10)
    np.testing.assert_allclose(sol.y2.values, g2.apply(sol.u2).values, atol=1e-10)


@pytest.mark.parametrize("name", ["saturation", "cubic", "deadzone", "relu"])
def test_kernel_and_generic_paths_agree(name):
    g = tf([1.0, 2.0], [1.0, 1.0])
    phi = static_map(name)
    plain = StaticMap(phi.fn, phi.lipschitz, name="plain-" + name)
    e1, e2 = rand_signal(3, amp=2.0), rand_signal(4)
    a = solve_feedback(FeedbackLoop(g, phi), e1, e2)
    b = solve_feedback(FeedbackLoop(g, plain), e1, e2)
    assert a.path == "lure" and b.path != "lure"
    np.testing.assert_allclose(a.y1.values, b.y1.values, atol=1e-8)
    np.testing.assert_allclose(a.y2.values, b.y2.values, atol=1e-8)
    check_loop_equations(a)


def test_static_map_as_sigma1():
    g = tf([1.0], [1.0, 1.0])
    sol = solve_feedback(FeedbackLoop(static_map("saturation"), g), rand_signal(5, amp=3.0))
    assert sol.path == "lure"
    check_loop_equations(sol)
    np.testing.assert_allclose(sol.y1.values, np.clip(sol.u1.values, -1, 1), atol=1e-12)


def test_memoryless_loop():
    sol = solve_feedback(FeedbackLoop(static_map("cubic"), static_map("saturation")),
                         rand_signal(6, amp=3.0))
    check_loop_equations(sol)
    assert sol.converged


def test_zero_sigma2_reproduces_open_loop():
    g = tf([1.0, -1.0], [1.0, 2.0])
    e1 = rand_signal(7)
    sol = solve_feedback(FeedbackLoop(g, ScalarGain(0.0)), e1)
    np.testing.assert_allclose(sol.y1.values, g.apply(e1).values, atol=1e-12)


def test_singular_linear_loop():
    with pytest.raises(AlgebraicLoopSingularError):
        solve_feedback(FeedbackLoop(ScalarGain(-1.0), identity()), rand_signal(8),
                       raise_on_failure=True)


def test_failed_solve_names_sample():
    bad = StaticMap(lambda w: -2.0 * w - w ** 3, 1.0, name="bad")
    loop = FeedbackLoop(bad, ScalarGain(1.0), SolverOptions(max_iter=3))
    e1 = SampledSignal([[0.0, 0.0, 5.0, 1.0]], 0.1)
    sol = solve_feedback(loop, e1)
    assert not sol.converged and sol.failed_at == 2
    with pytest.raises(IllPosedAtSampleError) as info:
        solve_feedback(loop, e1, raise_on_failure=True)
    assert info.value.sample == 2
    assert len(info.value.residual_history) >= 1


def test_dimension_mismatch():
    mimo = LtiStateSpace(-np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        FeedbackLoop(mimo, ScalarGain(1.0))


# -------------------------------------------------------------- gains and bounds


def test_gain_bounds():
    assert strict_passivity_gain_bound(0.5) == pytest.approx(4.0)
    assert output_strict_gain_bound(0.25) == pytest.approx(4.0)


@pytest.mark.parametrize("k", [0.1, 1.0, 10.0])
def test_output_strict_block_keeps_gain_below_bound(k):
    loop = FeedbackLoop(tf([1.0], [1.0, 1.0]), ScalarGain(k))
    ens = [rand_signal(s) for s in range(3)]
    est = closed_loop_gain_e1_to_y1(loop, ens)
    assert est.is_lower_bound
    assert est.lower_bound <= output_strict_gain_bound(1.0) * 1.05


def test_closed_loop_gain_witness_reproduces_ratio():
    loop = FeedbackLoop(ScalarGain(1.0), static_map("saturation"))
    ens = [stack([rand_signal(s, amp=2.0), rand_signal(s + 10)]) for s in range(3)]
    est = closed_loop_gain(loop, ens)
    e1, e2 = est.witness.split([1, 1])
    sol = solve_feedback(loop, e1, e2)
    assert l2_norm(sol.y) / l2_norm(sol.e) == pytest.approx(est.lower_bound, rel=1e-9)
    assert est.lower_bound <= strict_passivity_gain_bound(0.5) * 1.05


def test_closed_loop_of_passive_blocks_is_passive():
    loop = FeedbackLoop(tf([1.0], [1.0, 1.0]), static_map("saturation"))
    op = closed_loop_passivity_map(loop)
    for s in range(3):
        e = stack([rand_signal(s, amp=2.0), rand_signal(s + 5)])
        assert inner(e, op.apply(e)) >= -1e-9


# -------------------------------------------------------------- loop transformation


@pytest.mark.parametrize("inner_op", [identity(), static_map("saturation"), plain_saturation(),
                                      tf([1.0], [1.0, 1.0])],
                         ids=["identity", "saturation", "uncoded-saturation", "lag"])
def test_transformed_and_direct_loops_agree(inner_op):
    lt = loop_transform(tf([1.0], [1.0, 1.0]), inner_op, 0.5)
    # the uncoded map runs the per-sample generic solver, so keep it short
    N = 200 if getattr(inner_op, "name", None) == "clip" else 4000
    for s in range(3):
        e1, e2 = rand_signal(20 + s, N, amp=2.0), rand_signal(30 + s, N, amp=2.0)
        a = lt.solve(e1, e2, raise_on_failure=True)
        b = lt.solve_direct(e1, e2, raise_on_failure=True)
        assert a.path.startswith("transformed:")
        for x, y in ((a.y1, b.y1), (a.y2, b.y2), (a.u1, b.u1), (a.u2, b.u2)):
            np.testing.assert_allclose(x.values, y.values, atol=10 * 1e-10)


def test_transformed_inputs_shift_e2():
    lt = loop_transform(identity(), identity(), 0.25)
    e1, e2 = rand_signal(40), rand_signal(41)
    t1, t2 = lt.transformed_inputs(e1, e2)
    np.testing.assert_array_equal(t1.values, e1.values)
    np.testing.assert_allclose(t2.values, (e2 - 0.25 * e1).values)


def test_vanishing_shift_reduces_to_plain_loop():
    g, phi = tf([1.0], [1.0, 1.0]), static_map("saturation")
    e1, e2 = rand_signal(50, amp=2.0), rand_signal(51)
    lt = loop_transform(g, phi, 1e-9)
    plain = solve_feedback(FeedbackLoop(g, phi), e1, e2)
    a = lt.solve(e1, e2)
    np.testing.assert_allclose(a.y1.values, plain.y1.values, atol=1e-6)
    np.testing.assert_allclose(a.y2.values, plain.y2.values, atol=1e-6)


def test_loop_transform_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        loop_transform(identity(), identity(), 0.0)
    with pytest.raises(ValueError):
        NegFeedbackWithGain(identity(), -1.0)


def test_negfb_of_coded_map_uses_kernel_path():
    lt = loop_transform(tf([1.0], [1.0, 1.0]), static_map("cubic"), 0.5)
    sol = lt.solve_direct(rand_signal(60), rand_signal(61))
    assert sol.path == "lure"
    zero = zeros(1, 10, DT)
    assert solve_feedback(lt.original, zero).converged
