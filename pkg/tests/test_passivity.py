import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passivity_lab.errors import DegenerateEnsembleError, UndefinedIndexError, UnsupportedOperatorError
from passivity_lab.passivity import (
    INCONCLUSIVE,
    PASSIVE,
    VIOLATED,
    EnsembleSpec,
    estimate_indices,
    estimated_strict_trend,
    lemma1_equivalence_check,
    lti_frequency_indices,
    output_index,
    passivity_deficit,
    standard_ensemble,
    strict_index,
    strict_index_trend,
)
from passivity_lab.registry import AcausalSmoother
from passivity_lab.signals import SampledSignal, inner, l2_norm, zeros
from passivity_lab.systems import LtiStateSpace, ScalarGain, identity, static_map

DT = 0.01
WINDOW = 20.0
SPEC = EnsembleSpec(n_freq=6, n_random=4)


def tf(num, den, **kw):
    return LtiStateSpace.from_tf(num, den, **kw)


def ensemble(dim=1, spec=SPEC):
    return standard_ensemble(dim, DT, WINDOW, spec)


# -------------------------------------------------------------- ensembles


def test_ensemble_is_deterministic_and_resolution_independent():
    a, b = ensemble(), ensemble()
    assert len(a) == len(b)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.values, v.values)
    # below the sampling cap, the same spec at dt/2 samples the same continuous functions
    spec = EnsembleSpec(omega_max=10.0, n_freq=4, n_random=2)
    coarse = standard_ensemble(1, DT, WINDOW, spec)
    fine = standard_ensemble(1, DT / 2, WINDOW, spec)
    for i in (0, 2, len(coarse) - 1):  # step, sine, random member
        np.testing.assert_allclose(fine[i].values[0, ::2], coarse[i].values[0], atol=1e-12)


def test_ensemble_band_capped_by_sampling():
    lo, hi = EnsembleSpec(omega_max=1e6).band(DT)
    assert hi == pytest.approx(math.pi / (4 * DT))
    assert lo == 0.01


def test_mimo_ensemble_covers_channels_and_direction():
    ens = ensemble(dim=2)
    assert all(u.channels == 2 for u in ens)
    assert any(np.all(np.abs(u.values).sum(axis=1) > 0) for u in ens)


def test_empty_or_zero_ensemble_rejected():
    with pytest.raises(DegenerateEnsembleError):
        strict_index(identity(), [])
    with pytest.raises(DegenerateEnsembleError):
        strict_index(identity(), [zeros(1, 10, DT)])


# -------------------------------------------------------------- oracle values


@pytest.mark.parametrize("k", [0.5, 1.0, 4.0])
def test_static_gain_indices_match_closed_form(k):
    ens = ensemble()
    assert strict_index(ScalarGain(k), ens) == pytest.approx(k / (1 + k * k), rel=1e-12)
    assert output_index(ScalarGain(k), ens) == pytest.approx(1 / k, rel=1e-12)


def test_first_order_lag_frequency_oracle():
    ind = lti_frequency_indices(tf([1.0], [1.0, 1.0]))
    # Re G / |G|^2 = 1 at every frequency, Re G/(1+|G|^2) tends to 0 at high frequency
    assert ind["output_index"] == pytest.approx(1.0, rel=1e-9)
    assert 0 < ind["strict_index"] < 1e-5
    assert ind["passivity_margin"] >= 0


def test_time_domain_estimates_bound_oracle_from_above():
    op = tf([1.0, 2.0], [1.0, 1.0])
    ind = lti_frequency_indices(op)
    ens = ensemble()
    assert strict_index(op, ens) >= ind["strict_index"] - 1e-9
    assert output_index(op, ens) >= ind["output_index"] - 1e-3


def test_oracle_rejects_unstable_and_nonsquare():
    with pytest.raises(UnsupportedOperatorError):
        lti_frequency_indices(tf([1.0], [1.0, -1.0]))
    with pytest.raises(UnsupportedOperatorError):
        lti_frequency_indices(LtiStateSpace([[-1.0]], [[1.0, 0.0]], [[1.0]], [[0.0, 0.0]]))
    with pytest.raises(UnsupportedOperatorError):
        lti_frequency_indices(static_map("saturation"))


@given(a=st.floats(0.1, 10.0))
@settings(max_examples=15)
def test_output_index_scales_inversely(a):
    ens = ensemble()[:6]
    op = tf([1.0], [1.0, 1.0])
    base = output_index(op, ens)
    scaled = LtiStateSpace(op.A, op.B, a * op.C, a * op.D)
    assert output_index(scaled, ens) == pytest.approx(base / a, rel=1e-9)


@given(a=st.floats(0.1, 10.0))
@settings(max_examples=15)
def test_deficit_scales_with_square_of_input(a):
    op = tf([1.0, -1.0], [1.0, 2.0])
    ens = ensemble()[:6]
    d1 = passivity_deficit(op, ens).deficit
    da = passivity_deficit(op, [a * u for u in ens]).deficit
    assert da == pytest.approx(a * a * d1, rel=1e-9, abs=1e-12)


# -------------------------------------------------------------- verdicts and witnesses


def test_negative_gain_violated_with_reproducible_witness():
    op = ScalarGain(-1.0)
    rep = passivity_deficit(op, ensemble())
    assert rep.passivity_verdict == VIOLATED
    w = rep.witness_deficit
    assert inner(w, op.apply(w)) == pytest.approx(rep.deficit, rel=1e-9)
    assert rep.deficit < 0


def test_passive_lag_consistent():
    rep = passivity_deficit(tf([1.0], [1.0, 1.0]), ensemble())
    assert rep.passivity_verdict == PASSIVE
    assert rep.deficit >= -1e-12
    assert "finite window" in rep.search_metadata["caveat"]


def test_nonminimum_phase_block_violated():
    rep = passivity_deficit(tf([1.0, -1.0], [1.0, 2.0]), ensemble())
    assert rep.passivity_verdict == VIOLATED


def test_estimate_indices_report():
    op = tf([1.0], [1.0, 1.0])
    rep = estimate_indices(op, DT, WINDOW, seed=3, spec=SPEC, iterations=30)
    assert rep.verdicts["passivity"] == PASSIVE
    assert rep.verdicts["output"] == PASSIVE
    assert rep.verdicts["strict"] in (PASSIVE, INCONCLUSIVE)
    assert 0.9 <= rep.output_index <= 1.0 + 1e-4
    u = rep.witness_strict
    y = op.apply(u)
    assert inner(u, y) / (l2_norm(u) ** 2 + l2_norm(y) ** 2) == pytest.approx(rep.strict_index, rel=1e-9)
    u = rep.witness_output
    y = op.apply(u)
    assert inner(u, y) / l2_norm(y) ** 2 == pytest.approx(rep.output_index, rel=1e-9)


def test_estimate_indices_is_seeded():
    op = tf([1.0, 2.0], [1.0, 1.0])
    a = estimate_indices(op, DT, WINDOW, seed=7, spec=SPEC, iterations=20)
    b = estimate_indices(op, DT, WINDOW, seed=7, spec=SPEC, iterations=20)
    assert a.strict_index == b.strict_index and a.output_index == b.output_index
    np.testing.assert_array_equal(a.witness_strict.values, b.witness_strict.values)


def test_refinement_never_increases_estimate():
    op = tf([1.0, -1.0], [1.0, 2.0])
    ens = ensemble()
    plain = strict_index(op, ens)
    refined = strict_index(op, ens, iterations=40, seed=1)
    assert refined <= plain


def test_refinement_requires_seed():
    with pytest.raises(ValueError):
        strict_index(identity(), ensemble(), iterations=5)


def test_zero_operator_output_index_undefined():
    with pytest.raises(UndefinedIndexError):
        output_index(ScalarGain(0.0), ensemble())


def test_nonzero_initial_state_rejected():
    op = LtiStateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], x0=[1.0])
    with pytest.raises(UnsupportedOperatorError):
        passivity_deficit(op, ensemble())


# -------------------------------------------------------------- band dependence


def test_oracle_strict_trend_decreases_with_band():
    trend = strict_index_trend(tf([1.0], [1.0, 1.0]))
    vals = [v for _, v in trend]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[0] > 10 * vals[-1]


def test_estimated_trend_reports_effective_edge():
    trend = estimated_strict_trend(tf([1.0], [1.0, 1.0]), DT, WINDOW, SPEC)
    edges = [e for e, _ in trend]
    assert edges[-1] == pytest.approx(math.pi / (4 * DT))
    vals = [v for _, v in trend]
    assert vals[-1] <= vals[0]


# -------------------------------------------------------------- truncation equivalence


def test_truncated_supply_equals_supply_of_truncation_for_causal_operator():
    u = ensemble()[-1]
    chk = lemma1_equivalence_check(tf([1.0, 2.0], [1.0, 1.0]), u, WINDOW / 2)
    assert chk.gap <= 1e-12 * max(1.0, abs(chk.l2_value))


def test_acausal_operator_shows_gap():
    t = np.arange(int(WINDOW / DT)) * DT
    u = SampledSignal(1.0 + np.sin(t), DT)
    chk = lemma1_equivalence_check(AcausalSmoother(0.5), u, WINDOW / 2)
    assert chk.gap > 1e-3
