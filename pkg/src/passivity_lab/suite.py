"""Theorem suite: the ten acceptance checks as data rows.

Every row carries a theorem tag used by ``--filter`` (``lemma1``, ``thm1``,
``thm2``, ``thm3``, ``thm4``) plus a criterion number; solver failures mark
the row failed with the exception text instead of aborting the run.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AlgebraicLoopSingularError, IllPosedAtSampleError, PassivityLabError
from .falsify import (
    DESTABILIZED,
    NO_VIOLATION,
    adversary_search,
    h_samples,
    nyquist_pole_oracle,
    s_procedure_necessity_check,
    sigma_forms,
)
from .interconnect import (
    FeedbackLoop,
    closed_loop_gain,
    closed_loop_gain_e1_to_y1,
    closed_loop_passivity_map,
    loop_transform,
    output_strict_gain_bound,
    solve_feedback,
    strict_passivity_gain_bound,
)
from .passivity import (
    EnsembleSpec,
    lemma1_equivalence_check,
    lti_frequency_indices,
    output_index,
    passivity_deficit,
    random_bandlimited,
    standard_ensemble,
    strict_index,
)
from .registry import SuiteRegistry, default_registry, tf
from .signals import SampledSignal, inner, l2_norm, stack, zeros
from .systems import DEFAULT_SOLVER, NegFeedbackWithGain, ScalarGain, static_map

__all__ = ["SuiteRow", "run_suite", "CRITERIA", "TAGS", "select_criteria", "row_selected"]

# criterion -> theorem tags
CRITERIA = {
    1: ("lemma1",),
    2: ("thm1",),
    3: ("thm1",),
    4: ("thm2",),
    5: ("thm4",),
    6: ("thm2", "thm4"),
    7: ("thm2", "thm4"),
    8: ("thm2",),
    9: ("thm3",),
    10: ("crossval",),
}
TAGS = ("lemma1", "thm1", "thm2", "thm3", "thm4", "crossval")

# compact ensemble for the loop checks; same band as the default
LOOP_SPEC = EnsembleSpec(n_freq=6, n_random=4)


@dataclass
class SuiteRow:
    criterion: int
    theorem: str
    pair: str
    measured: float | None
    bound: float | None
    passed: bool
    status: str = "pass"
    note: str = ""
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _filter_tokens(filter_spec: str | None) -> tuple[set, set]:
    nums, tags = set(), set()
    for tok in (filter_spec or "").split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.isdigit():
            if int(tok) not in CRITERIA:
                raise ValueError(f"no criterion {tok}")
            nums.add(int(tok))
        elif tok in TAGS:
            tags.add(tok)
        else:
            raise ValueError(f"unknown filter {tok!r}; use {', '.join(TAGS)} or criterion numbers")
    return nums, tags


def row_selected(row: SuiteRow, filter_spec: str | None) -> bool:
    """Rows of a criterion chosen by number, or rows tagged with a chosen theorem."""
    nums, tags = _filter_tokens(filter_spec)
    if not nums and not tags:
        return True
    return row.criterion in nums or bool(tags & set(row.theorem.split("/")))


def select_criteria(filter_spec: str | None) -> list[int]:
    """Criteria matching a comma list of theorem tags or criterion numbers."""
    if not filter_spec:
        return sorted(CRITERIA)
    nums, tags = _filter_tokens(filter_spec)
    keep = set(nums)
    keep.update(c for c, ct in CRITERIA.items() if tags & set(ct))
    return sorted(keep)


def _random_signals(n: int, dt: float, window: float, seed: int, offset: float = 0.0,
                    amplitude: float = 1.0) -> list[SampledSignal]:
    rng = np.random.default_rng(seed)
    N = int(round(window / dt))
    t = np.arange(N) * dt
    return [SampledSignal(offset + random_bandlimited(rng, t, (0.05, 20.0), 6, amplitude), dt)
            for _ in range(n)]


# --------------------------------------------------------------------------
# criteria


def _c1(reg: SuiteRegistry, dt, window, seed):
    rng = np.random.default_rng(seed)
    signals = _random_signals(20, dt, window, seed + 1, offset=2.0, amplitude=0.5)
    horizons = rng.uniform(0.05 * window, window, 5)
    rows = []
    for name, op in reg.causal().items():
        worst = 0.0
        for u in signals:
            for T in horizons:
                c = lemma1_equivalence_check(op, u, T)
                worst = max(worst, c.gap / (1.0 + abs(c.extended_value)))
        rows.append(SuiteRow(1, "lemma1", name, worst, 1e-9, worst <= 1e-9))
    gaps = [lemma1_equivalence_check(reg.acausal, u, T).gap for u in signals for T in horizons]
    least = min(gaps)
    rows.append(SuiteRow(1, "lemma1", f"{reg.acausal!r} (negative control)", least, 1e-3, least > 1e-3,
                         note="smallest gap must exceed the bound"))
    return rows


def _c2(reg: SuiteRegistry, dt, window, seed):
    ens = standard_ensemble(2, dt, window, LOOP_SPEC)
    rows = []
    for n1, s1 in reg.passive.items():
        for n2, s2 in reg.passive.items():
            t0 = time.perf_counter()
            cl = closed_loop_passivity_map(FeedbackLoop(s1, s2))
            d = passivity_deficit(cl, ens).deficit
            rows.append(SuiteRow(2, "thm1", f"{n1} || {n2}", d, -1e-6, d >= -1e-6,
                                 seconds=time.perf_counter() - t0))
    return rows


def _c3(reg: SuiteRegistry, dt, window, seed):
    ens = standard_ensemble(1, dt, window, LOOP_SPEC)
    witnesses = {}
    for name, op in reg.nonpassive.items():
        rep = passivity_deficit(op, ens)
        witnesses[name] = rep.witness_deficit
    others = dict(reg.passive)
    others.update(reg.nonpassive)
    rows = []
    for nname, w in witnesses.items():
        bad = reg.nonpassive[nname]
        for oname, other in others.items():
            for first in (True, False):
                s1, s2 = (bad, other) if first else (other, bad)
                label = f"{nname} || {oname}" if first else f"{oname} || {nname}"
                N = w.samples
                if first:
                    # u1 = w, u2 = 0
                    e1 = w + s2.apply(zeros(s2.input_dim, N, w.dt))
                    e2 = -s1.apply(w)
                    how = "u2 = 0"
                else:
                    # u2 = w, u1 = 0
                    e1 = s2.apply(w)
                    e2 = w - s1.apply(zeros(s1.input_dim, N, w.dt))
                    how = "u1 = 0"
                try:
                    sol = solve_feedback(FeedbackLoop(s1, s2), e1, e2, raise_on_failure=True)
                except (AlgebraicLoopSingularError, IllPosedAtSampleError) as exc:
                    rows.append(SuiteRow(3, "thm1", label, None, -1e-6, True, "skip",
                                         f"loop not well-posed at this dt ({type(exc).__name__}); "
                                         "the equivalence presupposes well-posedness"))
                    continue
                e = stack([e1, e2])
                d = inner(e, sol.y)
                zero = sol.u2 if first else sol.u1
                note = f"witness built by setting {how}"
                if l2_norm(zero) > 1e-6 * max(1.0, l2_norm(w)):
                    note += "; solver picked a different solution branch"
                rows.append(SuiteRow(3, "thm1", label, d, -1e-6, d <= -1e-6, note=note))
    return rows


def _c4(reg: SuiteRegistry, dt, window, seed):
    ens1 = standard_ensemble(1, dt, window, LOOP_SPEC)
    ens2 = standard_ensemble(2, dt, window, LOOP_SPEC)
    rows = []
    for n1, s1 in reg.strict_sigma1.items():
        eps = strict_index(s1, ens1)
        for n2, s2 in reg.passive.items():
            label = f"{n1} || {n2}"
            if not eps > 0:
                rows.append(SuiteRow(4, "thm2", label, None, None, False, "fail",
                                     f"sigma1 is not strictly passive on the ensemble (index {eps:.4g})"))
                continue
            bound = strict_passivity_gain_bound(eps) * 1.05
            g = closed_loop_gain(FeedbackLoop(s1, s2), ens2).lower_bound
            rows.append(SuiteRow(4, "thm2", label, g, bound, g <= bound, note=f"measured eps {eps:.6g}"))
    return rows


def _c5(reg: SuiteRegistry, dt, window, seed):
    ens = standard_ensemble(1, dt, window, LOOP_SPEC)
    rows = []
    for n1, (s1, eps) in reg.output_strict_sigma1.items():
        bound = output_strict_gain_bound(eps) * 1.05
        for n2, s2 in reg.passive.items():
            g = closed_loop_gain_e1_to_y1(FeedbackLoop(s1, s2), ens).lower_bound
            rows.append(SuiteRow(5, "thm4", f"{n1} || {n2}", g, bound, g <= bound))
    return rows


def _c6(reg: SuiteRegistry, dt, window, seed):
    rows = []
    for name, op in reg.destabilizable.items():
        t0 = time.perf_counter()
        res = adversary_search(op, "static-gain", 50, 1e3, seed, dt, window)
        secs = time.perf_counter() - t0
        k = res.adversary_params.get("k")
        ok = res.verdict == DESTABILIZED and secs <= 30.0
        pole = res.evidence.get("max_pole_real")
        note = f"verdict {res.verdict}, k = {k}, {secs:.1f} s"
        bound = None
        if k is not None and pole is not None:
            oracle = nyquist_pole_oracle(op, res.adversary).max_real
            note += f", pole oracle {oracle:.6g}"
            if name == "(s-1)/(s+2)":
                bound = (k - 2.0) / (k + 1.0) - 1e-6
                ok = ok and k > 2 and pole >= bound
        rows.append(SuiteRow(6, "thm2/thm4", f"{name} vs static gain", pole, bound, ok,
                             "pass" if ok else "fail", note, secs))
    return rows


def _c7(reg: SuiteRegistry, dt, window, seed):
    rows = []
    for name, (op, bound, theorem) in reg.safe_sigma1.items():
        t0 = time.perf_counter()
        res = adversary_search(op, "all", 200, 10.0 * bound, seed, dt, window)
        worst = max(g for _, _, g in res.gain_trace)
        lim = bound * 1.05
        ok = res.verdict == NO_VIOLATION and worst <= lim
        rows.append(SuiteRow(7, theorem, f"{name} vs all families", worst,
                             lim, ok, "pass" if ok else "fail",
                             f"verdict {res.verdict}, {len(res.gain_trace)} candidates",
                             time.perf_counter() - t0))
    return rows


def _c8(reg: SuiteRegistry, dt, window, seed):
    rows = []
    good = ScalarGain(1.0)
    hs = h_samples("thm2", good, 100, dt, window, seed, subset="zero-e")
    worst = max(sigma_forms("thm2", 1.0, 2.0, h).combined for h in hs)
    rows.append(SuiteRow(8, "thm2", "gain 1, tau = 2", worst, 1e-9, worst <= 1e-9,
                         note="largest |S u|^2 + |u|^2 - tau <u, S u> over 100 inputs"))
    bad = ScalarGain(-1.0)
    hb = h_samples("thm2", bad, 100, dt, window, seed, subset="zero-e")
    res = s_procedure_necessity_check("thm2", bad, 1.0, samples=hb, tolerance=1e-9, normalize=False)
    rows.append(SuiteRow(8, "thm2", "gain -1, tau grid", res.max_combined, 1e-9, not res.feasible,
                         note=f"best tau {res.best_tau:.4g}; no tau may satisfy the bound"))
    return rows


def _c9(reg: SuiteRegistry, dt, window, seed):
    rows = []
    tol = 10.0 * DEFAULT_SOLVER.residual_tol
    rng = np.random.default_rng(seed)
    N = int(round(window / dt))
    t = np.arange(N) * dt
    inners = {"identity": ScalarGain(1.0), "saturation": static_map("saturation"),
              "1/(s+1)": tf([1.0], [1.0, 1.0])}
    for iname, inner_op in inners.items():
        lt = loop_transform(tf([1.0], [1.0, 1.0]), inner_op, 0.5)
        worst = 0.0
        for _ in range(10):
            e1 = SampledSignal(random_bandlimited(rng, t, (0.05, 20.0), 6, 2.0), dt)
            e2 = SampledSignal(random_bandlimited(rng, t, (0.05, 20.0), 6, 2.0), dt)
            a = lt.solve(e1, e2, raise_on_failure=True)
            b = lt.solve_direct(e1, e2, raise_on_failure=True)
            worst = max(worst, float(np.max(np.abs(a.y.values - b.y.values))))
        rows.append(SuiteRow(9, "thm3", f"1/(s+1) with negfb({iname}, 0.5)", worst, tol, worst <= tol))
    ens = standard_ensemble(1, dt, window, LOOP_SPEC)
    for eps in (0.1, 0.5, 1.0):
        for iname in ("saturation", "gain 2", "1/(s+1)"):
            inner_op = {"saturation": static_map("saturation"), "gain 2": ScalarGain(2.0),
                        "1/(s+1)": tf([1.0], [1.0, 1.0])}[iname]
            op = NegFeedbackWithGain(inner_op, eps)
            idx = output_index(op, ens, iterations=200, seed=seed)
            rows.append(SuiteRow(9, "thm3", f"output index of negfb({iname}, {eps})", idx, eps - 1e-6,
                                 idx >= eps - 1e-6, note="measured value must stay above the bound"))
    return rows


def _c10(reg: SuiteRegistry, dt, window, seed, cross_window: float = 200.0):
    rows = []
    spec = EnsembleSpec()
    for name, op in reg.oracle.items():
        t0 = time.perf_counter()
        lo, hi = spec.band(dt)
        orc = lti_frequency_indices(op, np.geomspace(lo, hi, 400))
        est = {}
        for h in (dt, dt / 2.0):
            ens = standard_ensemble(1, h, cross_window, spec)
            est[h] = (passivity_deficit(op, ens).margin, strict_index(op, ens), output_index(op, ens))
        oracle_vals = (orc["passivity_margin"], orc["strict_index"], orc["output_index"])
        parts, ok = [], True
        for label, o, a, b in zip(("margin", "strict", "output"), oracle_vals, est[dt], est[dt / 2.0]):
            agree = a <= o + 0.05 * abs(o) + 1e-12
            stable = abs(a - b) <= 0.02 * max(abs(a), abs(b)) + 1e-12
            ok = ok and agree and stable
            parts.append(f"{label}: est {a:.6g} oracle {o:.6g} dt/2 {b:.6g}")
        rel = max(abs(a - o) / max(abs(o), 1e-300) for o, a in zip(oracle_vals, est[dt]))
        rows.append(SuiteRow(10, "crossval", name, rel, 0.05, ok, "pass" if ok else "fail",
                             "; ".join(parts), time.perf_counter() - t0))
    return rows


_RUNNERS = {1: _c1, 2: _c2, 3: _c3, 4: _c4, 5: _c5, 6: _c6, 7: _c7, 8: _c8, 9: _c9, 10: _c10}


def run_suite(filter_spec: str | None = None, registry: SuiteRegistry | None = None,
              dt: float = 0.005, window: float = 100.0, seed: int = 0,
              criteria: list[int] | None = None) -> list[SuiteRow]:
    """Run the selected acceptance checks and return one row per check."""
    reg = registry or default_registry()
    chosen = criteria if criteria is not None else select_criteria(filter_spec)
    rows: list[SuiteRow] = []
    for c in chosen:
        t0 = time.perf_counter()
        try:
            out = _RUNNERS[c](reg, dt, window, seed)
        except (PassivityLabError, ValueError, ArithmeticError) as exc:
            out = [SuiteRow(c, "/".join(CRITERIA[c]), "-", None, None, False, "fail",
                            f"{type(exc).__name__}: {exc}")]
        elapsed = time.perf_counter() - t0
        for r in out:
            if not r.seconds:
                r.seconds = elapsed / max(1, len(out))
            if r.status == "pass" and not r.passed:
                r.status = "fail"
        rows.extend(r for r in out if criteria is not None or row_selected(r, filter_spec))
    return rows
