"""Converse-direction tools: quadratic-form certificates and adversary search.

``thm2`` and ``thm4`` name the two certificate variants:

* ``thm2`` acts on tuples ``(u1, u2, e1, e2)`` constrained by
  ``u2 = e2 + sigma1 u1``, with
  ``sigma0 = |u1|^2 + |u2|^2 - gamma |e1|^2 - gamma |e2|^2`` and
  ``sigma1 = -<u1, u2> + <u2, e1>``;
* ``thm4`` acts on ``(u1, y1, e1)`` constrained by ``y1 = sigma1 u1``, with
  ``sigma0 = (|y1|^2 - gamma^2 |e1|^2) / 2`` and
  ``sigma1 = -<u1, y1> + <y1, e1>``.

A multiplier ``tau >= 0`` with ``sigma0 + tau sigma1 <= 0`` on the whole
constraint set is what finite-gain stability against every passive
environment forces.  The adversary search looks for the opposite: a passive
environment (from a guarded, parameterized family) that destabilizes the
loop, using closed-loop poles as evidence for LTI pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from ._parallel import pmap
from .errors import (
    AlgebraicLoopSingularError,
    ArityError,
    DimensionMismatchError,
    EmptyFamilyError,
    IllPosedAtSampleError,
    PassivityLabError,
)
from .interconnect import FeedbackLoop, closed_loop_gain, closed_loop_gain_e1_to_y1
from .passivity import EnsembleSpec, random_bandlimited, standard_ensemble
from .signals import SampledSignal, SignalError, inner, l2_norm, stack, zeros
from .systems import (
    DiscreteRealization,
    LtiStateSpace,
    ScalarGain,
    StaticMap,
    SystemOperator,
    feedback_realization,
    lti_frequency_response,
    static_map,
)

__all__ = [
    "VARIANTS",
    "CertificateSpec",
    "SigmaValues",
    "sigma_forms",
    "membership_h",
    "h_samples",
    "NecessityResult",
    "s_procedure_necessity_check",
    "certificate_gamma",
    "AdversaryFamily",
    "FAMILY_NAMES",
    "adversary_family",
    "all_families",
    "FalsificationResult",
    "adversary_search",
    "NyquistResult",
    "nyquist_pole_oracle",
    "continuous_lti",
    "DESTABILIZED",
    "GAIN_EXCEEDED",
    "NO_VIOLATION",
]

VARIANTS = ("thm2", "thm4")
ARITY = {"thm2": 4, "thm4": 3}

DESTABILIZED = "destabilized"
GAIN_EXCEEDED = "gain-exceeded-threshold"
NO_VIOLATION = "no-violation-found"

MEMBERSHIP_RTOL = 1e-9
POLE_TOL = 1e-9


# --------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class CertificateSpec:
    variant: str
    gamma: float
    tau: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tau >= 0:
            raise ValueError("tau must be nonnegative")


@dataclass(frozen=True)
class SigmaValues:
    sigma0: float
    sigma1: float
    combined: float


def _check_arity(variant: str, signals):
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if len(signals) != ARITY[variant]:
        raise ArityError(f"{variant} forms take {ARITY[variant]} signals, got {len(signals)}")


def sigma_forms(variant: str, gamma: float, tau: float, signals: Sequence[SampledSignal]) -> SigmaValues:
    """Evaluate ``sigma0``, ``sigma1`` and ``sigma0 + tau*sigma1`` on a tuple."""
    spec = CertificateSpec(variant, gamma, tau)
    _check_arity(variant, signals)
    if variant == "thm2":
        u1, u2, e1, e2 = signals
        s0 = inner(u1, u1) + inner(u2, u2) - gamma * inner(e1, e1) - gamma * inner(e2, e2)
        s1 = -inner(u1, u2) + inner(u2, e1)
    else:
        u1, y1, e1 = signals
        s0 = 0.5 * (inner(y1, y1) - gamma * gamma * inner(e1, e1))
        s1 = -inner(u1, y1) + inner(y1, e1)
    return SigmaValues(s0, s1, s0 + spec.tau * s1)


def _energy(signals) -> float:
    return sum(l2_norm(s) ** 2 for s in signals)


def membership_h(variant: str, op: SystemOperator, signals: Sequence[SampledSignal]) -> tuple[bool, float]:
    """Check the constraint defining the certificate domain.

    Returns ``(member, residual)`` where ``residual`` is the L2 norm of
    ``u2 - e2 - op(u1)`` (thm2) or ``y1 - op(u1)`` (thm4); membership allows
    ``1e-9`` relative to the tuple's norm.
    """
    _check_arity(variant, signals)
    if variant == "thm2":
        u1, u2, e1, e2 = signals
        r = u2 - e2 - op.apply(u1)
    else:
        u1, y1, e1 = signals
        r = y1 - op.apply(u1)
    res = l2_norm(r)
    return res <= MEMBERSHIP_RTOL * max(1.0, math.sqrt(_energy(signals))), res


def h_samples(variant: str, op: SystemOperator, n: int, dt: float, window: float, seed: int,
              subset: str = "full", band=(0.05, 20.0)) -> list[tuple[SampledSignal, ...]]:
    """Random members of the constraint set.

    The free coordinates (``u1``, ``e1``, ``e2`` for thm2; ``u1``, ``e1`` for
    thm4) are random band-limited signals; the constrained one is computed.
    ``subset="zero-e"`` sets every ``e`` coordinate to zero.
    """
    _check_arity(variant, [None] * ARITY[variant])
    if subset not in ("full", "zero-e"):
        raise ValueError("subset must be 'full' or 'zero-e'")
    rng = np.random.default_rng(seed)
    N = int(round(window / dt))
    t = np.arange(N) * dt
    n1, p1 = op.input_dim, op.output_dim

    def sig(ch):
        return SampledSignal(np.vstack([random_bandlimited(rng, t, band, 6, rng.uniform(0.2, 2.0))
                                        for _ in range(ch)]), dt)

    out = []
    for _ in range(n):
        u1 = sig(n1)
        y = op.apply(u1)
        if variant == "thm2":
            e1 = sig(n1) if subset == "full" else zeros(n1, N, dt)
            e2 = sig(p1) if subset == "full" else zeros(p1, N, dt)
            out.append((u1, e2 + y, e1, e2))
        else:
            e1 = sig(n1) if subset == "full" else zeros(n1, N, dt)
            out.append((u1, y, e1))
    return out


@dataclass
class NecessityResult:
    variant: str
    gamma: float
    best_tau: float
    max_combined: float
    feasible: bool
    feasible_taus: list
    tau_grid: list
    max_by_tau: list
    tolerance: float
    samples: int


def default_tau_grid() -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-3, 3, 61)])


def s_procedure_necessity_check(variant: str, op: SystemOperator, gamma: float, tau_grid=None,
                                samples: Sequence[tuple] = (), tolerance: float = 1e-9,
                                normalize: bool = True, refine: bool = True) -> NecessityResult:
    """Search ``tau`` for ``max_h (sigma0 + tau*sigma1)(h) <= tolerance``.

    The grid defaults to ``{0} U logspace(-3, 3, 61)`` and is refined once
    (21 points between the neighbours of the best ``tau``).  With
    ``normalize`` the combined value of each sample is divided by its energy,
    making ``tolerance`` relative.  The outcome is reported, not asserted:
    failure on a passive-consistent system points to ``gamma`` being too
    small or to insufficient sampling.
    """
    CertificateSpec(variant, gamma)
    grid = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty tau grid")
    if np.any(grid < 0):
        raise ValueError("tau must be nonnegative")
    samples = list(samples)
    if not samples:
        raise ValueError("no samples of the constraint set")
    for h in samples:
        ok, res = membership_h(variant, op, h)
        if not ok:
            raise ValueError(f"sample is not in the constraint set (residual {res:.3e})")
    forms = [sigma_forms(variant, gamma, 0.0, h) for h in samples]
    scale = np.array([_energy(h) if normalize else 1.0 for h in samples])
    scale[scale == 0.0] = 1.0
    s0 = np.array([f.sigma0 for f in forms]) / scale
    s1 = np.array([f.sigma1 for f in forms]) / scale

    def worst(taus):
        return np.max(s0[None, :] + np.asarray(taus)[:, None] * s1[None, :], axis=1)

    grid = np.unique(grid)
    vals = worst(grid)
    if refine and grid.size > 1:
        i = int(np.argmin(vals))
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, grid.size - 1)]
        fine = np.linspace(lo, hi, 21)
        grid = np.unique(np.concatenate([grid, fine]))
        vals = worst(grid)
    i = int(np.argmin(vals))
    feasible = vals <= tolerance
    return NecessityResult(variant, float(gamma), float(grid[i]), float(vals[i]), bool(feasible.any()),
                           [float(t) for t in grid[feasible]], [float(t) for t in grid],
                           [float(v) for v in vals], float(tolerance), len(samples))


def certificate_gamma(variant: str, sigma1: SystemOperator, environments: Sequence[SystemOperator],
                      ensemble: Sequence[SampledSignal], margin: float = 1.05) -> float:
    """``gamma`` from measured closed-loop gains against passive environments.

    ``sigma0 <= 0`` bounds ``|(u1, u2)|^2`` by ``gamma |(e1, e2)|^2`` for thm2
    and ``|y1|`` by ``gamma |e1|`` for thm4, so the measured gain enters
    squared for thm2 and as is for thm4, times ``margin``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    best = 0.0
    for env in environments:
        loop = FeedbackLoop(sigma1, env)
        if variant == "thm4":
            best = max(best, closed_loop_gain_e1_to_y1(loop, ensemble).lower_bound)
        else:
            best = max(best, _gain_e_to_u(loop, ensemble))
    return margin * (best ** 2 if variant == "thm2" else best)


def _gain_e_to_u(loop: FeedbackLoop, ensemble) -> float:
    from .interconnect import solve_feedback

    n1, n2 = loop.dims
    best = 0.0
    for e in ensemble:
        if e.channels == n1:
            e1, e2 = e, zeros(n2, e.samples, e.dt)
        else:
            e1, e2 = e.split([n1, n2])
        ne = math.hypot(l2_norm(e1), l2_norm(e2))
        if ne == 0.0:
            continue
        sol = solve_feedback(loop, e1, e2, raise_on_failure=True)
        best = max(best, l2_norm(stack([sol.u1, sol.u2])) / ne)
    return best


# --------------------------------------------------------------------------
# pole oracle


def continuous_lti(op: SystemOperator):
    """``(A, B, C, D)`` of an LTI operator, or ``None``."""
    if isinstance(op, LtiStateSpace):
        return op.A, op.B, op.C, op.D
    if isinstance(op, ScalarGain):
        n = op.input_dim
        return np.zeros((0, 0)), np.zeros((0, n)), np.zeros((n, 0)), op.k * np.eye(n)
    return None


def _as_ss(op: SystemOperator) -> LtiStateSpace:
    m = continuous_lti(op)
    if m is None:
        raise TypeError(f"{type(op).__name__} is not an LTI operator")
    if isinstance(op, LtiStateSpace):
        return op
    return LtiStateSpace(*m)


@dataclass
class NyquistResult:
    poles: np.ndarray
    stable: bool
    nyquist_locus: np.ndarray
    omegas: np.ndarray

    @property
    def max_real(self) -> float:
        return float(np.max(self.poles.real)) if self.poles.size else -math.inf


def nyquist_pole_oracle(sigma1: SystemOperator, sigma2: SystemOperator, omegas=None) -> NyquistResult:
    """Closed-loop poles of two continuous LTI blocks and the loop locus.

    The state matrix of the loop ``u1 = e1 - y2``, ``u2 = e2 + y1`` is built
    through ``(I + D2 D1)^-1``; the loop is stable iff every pole has real
    part below ``-1e-9``.  The locus is ``G1(jw) G2(jw)`` for SISO pairs and
    ``det(I + G2 G1) - 1`` otherwise.
    """
    s1, s2 = _as_ss(sigma1), _as_ss(sigma2)
    if s1.output_dim != s2.input_dim or s2.output_dim != s1.input_dim:
        raise DimensionMismatchError("loop dimensions do not match")
    # the discrete loop algebra is the same for continuous matrices
    r1 = DiscreteRealization(s1.A, s1.B, s1.C, s1.D, np.zeros(s1.states))
    r2 = DiscreteRealization(s2.A, s2.B, s2.C, s2.D, np.zeros(s2.states))
    A_cl = feedback_realization(r1, r2).Ad
    poles = np.linalg.eigvals(A_cl) if A_cl.size else np.zeros(0, dtype=complex)
    stable = bool(np.all(poles.real < -POLE_TOL))
    w = np.logspace(-3, 3, 601) if omegas is None else np.asarray(omegas, dtype=float)
    try:
        G1 = lti_frequency_response(s1, w)
        G2 = lti_frequency_response(s2, w)
        if s1.input_dim == 1 and s1.output_dim == 1:
            locus = G1[:, 0, 0] * G2[:, 0, 0]
        else:
            eye = np.eye(s1.input_dim)
            locus = np.array([np.linalg.det(eye + G2[k] @ G1[k]) - 1.0 for k in range(w.size)])
    except PassivityLabError:
        locus = np.full(w.size, np.nan + 0j)
    return NyquistResult(poles, stable, locus, w)


# --------------------------------------------------------------------------
# adversary families

FAMILY_NAMES = ("static-gain", "first-order", "lead", "lag-lead",
                "saturation", "cubic", "deadzone", "relu")

_GUARD_GRID = np.logspace(-4, 4, 801)
_SECTOR_GRID = np.linspace(-100.0, 100.0, 2001)


@dataclass(frozen=True, eq=False)
class AdversaryFamily:
    """Parameterized passive environments with a positive-realness guard.

    ``bounds`` maps parameter names to positive ``(low, high)`` ranges that
    are searched in log space.
    """

    name: str
    bounds: dict
    build: Callable[[dict], SystemOperator]

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def guard(self, op: SystemOperator) -> bool:
        """Positive realness (LTI) or sector ``phi(x) x >= 0`` (static)."""
        lti = continuous_lti(op)
        if lti is not None:
            ss = _as_ss(op)
            if ss.states and not ss.is_stable():
                return False
            G = lti_frequency_response(ss, _GUARD_GRID)
            H = 0.5 * (G + np.conj(np.transpose(G, (0, 2, 1))))
            return bool(np.min(np.linalg.eigvalsh(H)) >= -1e-9)
        if isinstance(op, StaticMap) and op.input_dim == 1:
            x = _SECTOR_GRID[np.newaxis, :]
            return bool(np.all(op.memoryless_eval(x) * x >= -1e-12))
        return False


def _tf(num, den) -> LtiStateSpace:
    return LtiStateSpace.from_tf(num, den)


_FAMILIES = {
    "static-gain": ({"k": (1e-2, 1e3)}, lambda p: ScalarGain(p["k"])),
    "first-order": ({"k": (1e-2, 1e3), "a": (1e-2, 1e2)}, lambda p: _tf([p["k"]], [1.0, p["a"]])),
    "lead": ({"k": (1e-2, 1e3), "a": (1e-2, 1e2)}, lambda p: _tf([p["k"], 0.0], [1.0, p["a"]])),
    "lag-lead": ({"k": (1e-2, 1e3), "a": (1e-2, 1e2), "b": (1e-2, 1e2)},
                 lambda p: _tf([p["k"], p["k"] * p["a"]], [1.0, p["b"]])),
    "saturation": ({"level": (1e-2, 1e2)}, lambda p: static_map("saturation", level=p["level"])),
    "cubic": ({"a": (1e-2, 1e2), "b": (1e-3, 1e1)}, lambda p: static_map("cubic", a=p["a"], b=p["b"])),
    "deadzone": ({"width": (1e-2, 1e1)}, lambda p: static_map("deadzone", width=p["width"])),
    "relu": ({}, lambda p: static_map("relu")),
}


def adversary_family(name: str, bounds: dict | None = None) -> AdversaryFamily:
    """Registered family by name, optionally with narrowed parameter bounds."""
    try:
        default, build = _FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; known: {list(FAMILY_NAMES)}") from None
    b = dict(default)
    if bounds:
        for k, (lo, hi) in bounds.items():
            if k not in b:
                raise ValueError(f"family {name!r} has no parameter {k!r}")
            if not 0 < lo <= hi:
                raise ValueError("parameter bounds must be positive with low <= high")
            b[k] = (float(lo), float(hi))
    return AdversaryFamily(name, b, build)


def all_families() -> list[AdversaryFamily]:
    return [adversary_family(n) for n in FAMILY_NAMES]


# --------------------------------------------------------------------------
# search


@dataclass
class Candidate:
    family: str
    params: dict
    gain: float
    max_pole_real: float | None
    poles: list | None
    passed_guard: bool
    note: str = ""

    def key(self):
        return (self.family, tuple(sorted(self.params.items())))


@dataclass
class FalsificationResult:
    adversary: SystemOperator | None
    adversary_family: str
    adversary_params: dict
    gain_trace: list
    verdict: str
    evidence: dict = field(default_factory=dict)
    threshold: float = 0.0
    budget: int = 0


def probe_ensemble(dim: int, dt: float, window: float, seed: int = 0) -> list[SampledSignal]:
    """Small fixed probe set: steps, a few whole-period sinusoids, random inputs."""
    spec = EnsembleSpec(omega_min=0.1, omega_max=10.0, n_freq=3, n_random=2, seed=seed)
    return standard_ensemble(dim, dt, window, spec)


def _rank(c: Candidate):
    """Evidence hierarchy: pole real part first, then gain."""
    pole = c.max_pole_real if c.max_pole_real is not None else -math.inf
    unstable = pole > POLE_TOL
    return (1 if unstable else 0, pole if unstable else 0.0, c.gain)


def _evaluate(sigma1, family: AdversaryFamily, params: dict, probes) -> Candidate:
    op = family.build(params)
    if not family.guard(op):
        return Candidate(family.name, params, math.nan, None, None, False, "guard rejected")
    pole_re, poles, note = None, None, ""
    if continuous_lti(sigma1) is not None and continuous_lti(op) is not None:
        try:
            ny = nyquist_pole_oracle(sigma1, op, omegas=np.array([1.0]))
            pole_re = ny.max_real
            poles = [complex(p) for p in ny.poles]
        except AlgebraicLoopSingularError:
            return Candidate(family.name, params, math.inf, None, None, True, "singular loop")
    loop = FeedbackLoop(sigma1, op)
    try:
        g = closed_loop_gain_e1_to_y1(loop, probes).lower_bound
    except (AlgebraicLoopSingularError, IllPosedAtSampleError) as exc:
        g, note = math.inf, f"ill-posed: {type(exc).__name__}"
    except (SignalError, FloatingPointError, OverflowError):
        g, note = math.inf, "response overflowed"
    if not math.isfinite(g) and not note:
        note = "response overflowed"
    return Candidate(family.name, params, float(g), pole_re, poles, True, note)


def _to_params(family: AdversaryFamily, z: np.ndarray) -> dict:
    out = {}
    for (name, (lo, hi)), zi in zip(family.bounds.items(), z):
        out[name] = float(math.exp(math.log(lo) + float(zi) * (math.log(hi) - math.log(lo))))
    return out


def _search_family(sigma1, family: AdversaryFamily, budget: int, probes, rng) -> list[Candidate]:
    d = family.dim
    if d == 0:
        return [_evaluate(sigma1, family, {}, probes)]
    n_lhs = max(1, min(budget, int(math.ceil(0.6 * budget))))
    z = qmc.LatinHypercube(d=d, seed=rng).random(n_lhs)
    cands = pmap(lambda zi: _evaluate(sigma1, family, _to_params(family, zi), probes), list(z))
    zs = {c.key(): zi for c, zi in zip(cands, z)}
    remaining = budget - n_lhs
    step = 0.25
    seen = set(zs)
    while remaining > 0:
        usable = [c for c in cands if c.passed_guard and not math.isnan(c.gain)]
        if not usable:
            break
        best = max(usable, key=_rank)
        z0 = zs[best.key()]
        trial = np.clip(z0 + step * rng.uniform(-1.0, 1.0, d), 0.0, 1.0)
        params = _to_params(family, trial)
        c = _evaluate(sigma1, family, params, probes)
        remaining -= 1
        if c.key() in seen:
            step *= 0.5
            continue
        seen.add(c.key())
        zs[c.key()] = trial
        cands.append(c)
        if _rank(c) <= _rank(best):
            step = max(step * 0.5, 1e-6)
    return cands


def adversary_search(sigma1: SystemOperator, family, budget: int, gain_threshold: float,
                     seed: int, dt: float = 0.005, window: float = 100.0,
                     probes: Sequence[SampledSignal] | None = None) -> FalsificationResult:
    """Search guarded passive environments for one that breaks the loop with ``sigma1``.

    Parameters
    ----------
    family : AdversaryFamily, str or list of them
        ``"all"`` searches every registered family, splitting the budget.
    budget : int
        Total number of candidate environments evaluated.
    gain_threshold : float
        ``e1 -> y1`` gain regarded as evidence of lost stability.

    Each family is sampled by a Latin hypercube in log-parameter space
    (60% of its budget) and then refined around the best candidate.
    Candidates are ranked by closed-loop pole real part (LTI pairs) and then
    by measured gain.  The trace is sorted by family and parameters.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if not gain_threshold > 1:
        raise ValueError("gain threshold must exceed 1")
    if sigma1.input_dim != 1 or sigma1.output_dim != 1:
        raise DimensionMismatchError("adversary families are SISO")
    if isinstance(family, str):
        families = all_families() if family == "all" else [adversary_family(family)]
    elif isinstance(family, AdversaryFamily):
        families = [family]
    else:
        families = [adversary_family(f) if isinstance(f, str) else f for f in family]
    if not families:
        raise EmptyFamilyError("no families to search")
    if probes is None:
        probes = probe_ensemble(1, dt, window, seed)
    rng = np.random.default_rng(seed)
    share = [budget // len(families)] * len(families)
    for i in range(budget % len(families)):
        share[i] += 1
    cands: list[Candidate] = []
    for fam, b in zip(families, share):
        if b == 0:
            continue
        cands.extend(_search_family(sigma1, fam, b, probes, np.random.default_rng(rng.integers(2 ** 63))))
    good = [c for c in cands if c.passed_guard and not math.isnan(c.gain)]
    if not good:
        raise EmptyFamilyError("the passivity guard rejected every candidate")
    best = max(good, key=_rank)
    unstable = best.max_pole_real is not None and best.max_pole_real > POLE_TOL
    if unstable:
        verdict = DESTABILIZED
    elif best.gain >= gain_threshold:
        verdict = GAIN_EXCEEDED
    else:
        verdict = NO_VIOLATION
    fam = next(f for f in families if f.name == best.family)
    trace = sorted(good, key=lambda c: c.key())
    evidence = {"max_pole_real": best.max_pole_real, "poles": best.poles, "gain": best.gain,
                "note": best.note, "rejected": sum(1 for c in cands if not c.passed_guard),
                "probe_count": len(probes)}
    return FalsificationResult(fam.build(best.params), best.family, best.params,
                               [(c.family, c.params, c.gain) for c in trace], verdict, evidence,
                               float(gain_threshold), int(budget))
