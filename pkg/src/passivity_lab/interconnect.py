"""Standard feedback interconnection ``u1 = e1 - y2``, ``u2 = e2 + y1``.

The solver marches sample by sample and picks the cheapest exact route:

* both blocks linear: one closed-loop discrete realization (compiled march);
* one SISO linear block with a registered static map: compiled Lur'e march;
* both blocks memoryless and SISO: all samples solved at once, elementwise;
* anything else: per-sample steppers with a damped fixed point / Newton solve.

Well-posedness is judged per sample at the chosen ``dt``: a singular linear
loop raises :class:`AlgebraicLoopSingularError`; a nonlinear loop that does
not converge is reported through ``LoopSolution.converged``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from ._algebra import solve_fixed_point, solve_fixed_point_columns
from .errors import (
    AlgebraicLoopSingularError,
    DegenerateEnsembleError,
    DimensionMismatchError,
    IllPosedAtSampleError,
)
from .signals import SampledSignal, l2_norm, stack, zeros
from .systems import (
    DEFAULT_SOLVER,
    SINGULAR_COND,
    GainEstimate,
    NegFeedbackWithGain,
    ScalarGain,
    SolverOptions,
    StaticMap,
    Sum,
    SystemOperator,
    feedback_realization,
)

__all__ = [
    "FeedbackLoop",
    "LoopSolution",
    "LoopTransformation",
    "ClosedLoopMap",
    "solve_feedback",
    "closed_loop_gain",
    "closed_loop_gain_e1_to_y1",
    "closed_loop_passivity_map",
    "loop_transform",
    "strict_passivity_gain_bound",
    "output_strict_gain_bound",
]


@dataclass(frozen=True, eq=False)
class FeedbackLoop:
    sigma1: SystemOperator
    sigma2: SystemOperator
    solver: SolverOptions = DEFAULT_SOLVER

    def __post_init__(self):
        s1, s2 = self.sigma1, self.sigma2
        if s1.output_dim != s2.input_dim or s2.output_dim != s1.input_dim:
            raise DimensionMismatchError(
                f"sigma1 is {s1.input_dim}->{s1.output_dim} but sigma2 is "
                f"{s2.input_dim}->{s2.output_dim}")

    @property
    def dims(self) -> tuple[int, int]:
        """Channel counts of ``(e1, e2)``."""
        return self.sigma1.input_dim, self.sigma2.input_dim


@dataclass(frozen=True, eq=False)
class LoopSolution:
    u1: SampledSignal
    u2: SampledSignal
    y1: SampledSignal
    y2: SampledSignal
    e1: SampledSignal
    e2: SampledSignal
    residual: float
    converged: bool
    failed_at: int | None = None
    path: str = ""

    @property
    def y(self) -> SampledSignal:
        return stack([self.y1, self.y2])

    @property
    def e(self) -> SampledSignal:
        return stack([self.e1, self.e2])


def _loop_residual(u1, u2, y1, y2, e1, e2) -> np.ndarray:
    r = np.vstack([u1 - e1 + y2, u2 - e2 - y1])
    return np.sqrt(np.sum(r * r, axis=0))


# --------------------------------------------------------------------------
# generic per-sample loop step


class _LoopStep:
    """One-sample solve of the loop given internal steppers of both blocks."""

    def __init__(self, s1, s2, n1: int, n2: int, solver: SolverOptions):
        self.s1, self.s2, self.n1, self.n2, self.solver = s1, s2, n1, n2, solver
        D1, D2 = s1.feedthrough, s2.feedthrough
        self.mode = "iterate"
        if D1 is not None and D2 is not None:
            L = np.eye(n1) + D2 @ D1
            if np.linalg.cond(L) > SINGULAR_COND:
                raise AlgebraicLoopSingularError(
                    f"I + D2 D1 is singular (cond = {np.linalg.cond(L):.3e})")
            self.M = np.linalg.inv(L)
            self.D1, self.D2 = D1, D2
            self.mode = "linear"
        elif D2 is not None and not np.any(D2):
            self.mode = "sigma2-first"
        elif D1 is not None and not np.any(D1):
            self.mode = "sigma1-first"
        self.feedthrough = None

    def solve(self, e1, e2):
        """Return ``(u1, u2, y1, y2, residual, converged, trace)``."""
        s1, s2 = self.s1, self.s2
        trace = []
        ok = True
        if self.mode == "linear":
            c1 = s1.output(np.zeros(self.n1))
            c2 = s2.output(np.zeros(self.n2))
            u1 = self.M @ (e1 - c2 - self.D2 @ (e2 + c1))
        elif self.mode == "sigma2-first":
            u1 = e1 - s2.output(np.zeros(self.n2))
        elif self.mode == "sigma1-first":
            y1 = s1.output(np.zeros(self.n1))
            u1 = e1 - s2.output(e2 + y1)
        else:
            s = self.solver
            u1, _, ok, trace = solve_fixed_point(
                lambda v: e1 - s2.output(e2 + s1.output(v)), e1,
                s.damping, s.residual_tol, s.max_iter, history=True)
        y1 = s1.output(u1)
        u2 = e2 + y1
        y2 = s2.output(u2)
        res = float(np.linalg.norm(u1 - e1 + y2))
        return u1, u2, y1, y2, res, ok and res <= self.solver.residual_tol, trace

    def commit(self, u1, u2):
        self.s1.commit(u1)
        self.s2.commit(u2)


class _ClosedLoopStepper:
    """Stepper for the map ``(e1, e2) -> (y1, y2)``."""

    def __init__(self, step: _LoopStep):
        self.step = step
        self.feedthrough = None
        self._last = None

    def _solve(self, e):
        if self._last is not None and np.array_equal(self._last[0], e):
            return self._last[1]
        n1 = self.step.n1
        out = self.step.solve(e[:n1], e[n1:])
        if not out[5]:
            raise IllPosedAtSampleError(-1, out[6])
        self._last = (np.array(e, copy=True), out)
        return out

    def output(self, e):
        u1, u2, y1, y2 = self._solve(np.asarray(e, dtype=float))[:4]
        return np.concatenate([y1, y2])

    def commit(self, e):
        u1, u2 = self._solve(np.asarray(e, dtype=float))[:2]
        self.step.commit(u1, u2)
        self._last = None


# --------------------------------------------------------------------------
# solver routes


def _solution(loop, e1, e2, U1, U2, Y1, Y2, fail, path, res=None):
    dt = e1.dt
    sig = [SampledSignal(a, dt) for a in (U1, U2, Y1, Y2)]
    if res is None:
        res = _loop_residual(U1, U2, Y1, Y2, e1.values, e2.values)
    if fail is not None:
        res = res[: fail + 1]
    worst = float(np.max(res)) if res.size else 0.0
    converged = fail is None and worst <= loop.solver.residual_tol
    return LoopSolution(*sig, e1, e2, worst, converged, fail, path)


def _solve_linear(loop, r1, r2, e1, e2):
    real = feedback_realization(r1, r2)
    out = real.simulate(stack([e1, e2])).values
    n1, n2 = loop.dims
    U1, U2 = out[:n1], out[n1:n1 + n2]
    Y1, Y2 = out[n1 + n2:n1 + 2 * n2], out[n1 + 2 * n2:]
    return _solution(loop, e1, e2, U1, U2, Y1, Y2, None, "linear")


def _kernel_static(op) -> bool:
    return getattr(op, "code", None) is not None and op.input_dim == 1 and op.memoryless


def _solve_lure(loop, real, static, orient, e1, e2):
    s = loop.solver
    u1, u2, y1, y2, res, fail = _kernels.lure_march(
        real.Ad, real.Bd, real.Cd.reshape(-1), real.Dd[0, 0], orient, static.code,
        static.kernel_params(), e1.values[0], e2.values[0], real.x0,
        s.damping, s.residual_tol, s.max_iter)
    fail = None if fail < 0 else int(fail)
    return _solution(loop, e1, e2, u1[np.newaxis], u2[np.newaxis], y1[np.newaxis],
                     y2[np.newaxis], fail, "lure", res)


def _solve_memoryless(loop, e1, e2):
    s = loop.solver
    f1, f2 = loop.sigma1.memoryless_eval, loop.sigma2.memoryless_eval
    a, b = e1.values[0], e2.values[0]

    def g(v, idx):
        return a[idx] - f2((b[idx] + f1(v[np.newaxis, :])[0])[np.newaxis, :])[0]

    u1, res, ok = solve_fixed_point_columns(g, a.copy(), s.damping, s.residual_tol, s.max_iter)
    fail = None if ok.all() else int(np.flatnonzero(~ok)[0])
    U1 = u1[np.newaxis, :]
    Y1 = f1(U1)
    U2 = e2.values + Y1
    Y2 = f2(U2)
    if fail is not None:
        for arr in (U1, U2, Y1, Y2):
            arr[:, fail:] = 0.0
    return _solution(loop, e1, e2, U1, U2, Y1, Y2, fail, "memoryless")


def _solve_generic(loop, e1, e2):
    dt = e1.dt
    step = _LoopStep(loop.sigma1.stepper(dt, loop.solver), loop.sigma2.stepper(dt, loop.solver),
                     *loop.dims, loop.solver)
    n1, n2 = loop.dims
    N = e1.samples
    U1, U2 = np.zeros((n1, N)), np.zeros((n2, N))
    Y1, Y2 = np.zeros((n2, N)), np.zeros((n1, N))
    res = np.zeros(N)
    fail, trace = None, []
    E1, E2 = e1.values, e2.values
    for k in range(N):
        try:
            u1, u2, y1, y2, r, ok, tr = step.solve(E1[:, k], E2[:, k])
        except IllPosedAtSampleError as exc:
            fail, trace = k, exc.residual_history
            break
        res[k] = r
        if not ok:
            fail, trace = k, tr
            break
        U1[:, k], U2[:, k], Y1[:, k], Y2[:, k] = u1, u2, y1, y2
        step.commit(u1, u2)
    sol = _solution(loop, e1, e2, U1, U2, Y1, Y2, fail, "generic", res)
    if fail is not None:
        object.__setattr__(sol, "_trace", trace)
    return sol


def solve_feedback(loop: FeedbackLoop, e1: SampledSignal, e2: SampledSignal | None = None,
                   raise_on_failure: bool = False) -> LoopSolution:
    """Solve the loop for exogenous ``(e1, e2)``; ``e2`` defaults to zero.

    Returns a :class:`LoopSolution`.  If a per-sample loop fails to converge
    the solution has ``converged=False`` and ``failed_at`` set, with signals
    zeroed from that sample on; with ``raise_on_failure`` an
    :class:`IllPosedAtSampleError` is raised instead.
    """
    n1, n2 = loop.dims
    if e2 is None:
        e2 = zeros(n2, e1.samples, e1.dt)
    if e1.channels != n1 or e2.channels != n2:
        raise DimensionMismatchError(
            f"loop expects e1 with {n1} and e2 with {n2} channels, got {e1.channels}, {e2.channels}")
    if e1.samples != e2.samples or abs(e1.dt - e2.dt) > 1e-9 * e1.dt:
        raise DimensionMismatchError("e1 and e2 must share dt and sample count")
    dt = e1.dt
    s1, s2 = loop.sigma1, loop.sigma2
    r1, r2 = s1.realize(dt), s2.realize(dt)
    siso = n1 == 1 and n2 == 1
    if r1 is not None and r2 is not None:
        sol = _solve_linear(loop, r1, r2, e1, e2)
    elif siso and r1 is not None and _kernel_static(s2):
        sol = _solve_lure(loop, r1, s2, 0, e1, e2)
    elif siso and r2 is not None and _kernel_static(s1):
        sol = _solve_lure(loop, r2, s1, 1, e1, e2)
    elif siso and s1.memoryless and s2.memoryless:
        sol = _solve_memoryless(loop, e1, e2)
    else:
        sol = _solve_generic(loop, e1, e2)
    if not sol.converged and sol.path != "generic":
        # second opinion from the generic route, which also records the trace
        sol = _solve_generic(loop, e1, e2)
    if raise_on_failure and not sol.converged:
        k = sol.failed_at if sol.failed_at is not None else -1
        raise IllPosedAtSampleError(k, getattr(sol, "_trace", [sol.residual]))
    return sol


# --------------------------------------------------------------------------
# gains


def _pairs(loop: FeedbackLoop, ensemble) -> list[tuple[SampledSignal, SampledSignal]]:
    n1, n2 = loop.dims
    out = []
    for item in ensemble:
        if isinstance(item, SampledSignal):
            if item.channels == n1 + n2:
                e1, e2 = item.split([n1, n2])
            elif item.channels == n1:
                e1, e2 = item, zeros(n2, item.samples, item.dt)
            else:
                raise DimensionMismatchError(f"ensemble signal has {item.channels} channels")
        else:
            e1, e2 = item
        out.append((e1, e2))
    return out


def closed_loop_gain(loop: FeedbackLoop, ensemble: Iterable) -> GainEstimate:
    """Largest ``||(y1, y2)|| / ||(e1, e2)||`` over the ensemble (a lower bound on ``||F||``).

    Ensemble items are ``(e1, e2)`` pairs or stacked signals.
    """
    pairs = _pairs(loop, ensemble)
    if not pairs:
        raise DegenerateEnsembleError("empty ensemble")
    best, witness = -1.0, None
    for e1, e2 in pairs:
        e = stack([e1, e2])
        ne = l2_norm(e)
        if ne == 0.0:
            continue
        sol = solve_feedback(loop, e1, e2, raise_on_failure=True)
        ratio = l2_norm(sol.y) / ne
        if ratio > best:
            best, witness = ratio, e
    if witness is None:
        raise DegenerateEnsembleError("ensemble contains only zero signals")
    return GainEstimate(best, witness, len(pairs), "random")


def closed_loop_gain_e1_to_y1(loop: FeedbackLoop, ensemble: Iterable[SampledSignal]) -> GainEstimate:
    """Largest ``||y1|| / ||e1||`` with ``e2 = 0``."""
    ensemble = list(ensemble)
    if not ensemble:
        raise DegenerateEnsembleError("empty ensemble")
    best, witness = -1.0, None
    for e1 in ensemble:
        ne = l2_norm(e1)
        if ne == 0.0:
            continue
        sol = solve_feedback(loop, e1, raise_on_failure=True)
        ratio = l2_norm(sol.y1) / ne
        if ratio > best:
            best, witness = ratio, e1
    if witness is None:
        raise DegenerateEnsembleError("ensemble contains only zero signals")
    return GainEstimate(best, witness, len(ensemble), "random")


def strict_passivity_gain_bound(eps: float) -> float:
    """Gain bound ``2 + 1/eps`` for a strictly passive block in loop with a passive one."""
    return 2.0 + 1.0 / eps


def output_strict_gain_bound(eps: float) -> float:
    """``e1 -> y1`` gain bound ``1/eps`` for an output strictly passive block, ``e2 = 0``."""
    return 1.0 / eps


# --------------------------------------------------------------------------
# closed-loop operator


class ClosedLoopMap(SystemOperator):
    """The map ``(e1, e2) -> (y1, y2)`` of a loop, as an operator on stacked signals."""

    def __init__(self, loop: FeedbackLoop):
        self.loop = loop
        n1, n2 = loop.dims
        self.input_dim = self.output_dim = n1 + n2

    @property
    def time_invariant(self):
        return self.loop.sigma1.time_invariant and self.loop.sigma2.time_invariant

    def realize(self, dt):
        r1, r2 = self.loop.sigma1.realize(dt), self.loop.sigma2.realize(dt)
        if r1 is None or r2 is None:
            return None
        real = feedback_realization(r1, r2)
        n = self.input_dim
        rows = slice(n, 2 * n)
        return type(real)(real.Ad, real.Bd, real.Cd[rows], real.Dd[rows], real.x0)

    def stepper(self, dt, solver=DEFAULT_SOLVER):
        real = self.realize(dt)
        if real is not None:
            return super().stepper(dt, solver)
        lp = self.loop
        return _ClosedLoopStepper(_LoopStep(lp.sigma1.stepper(dt, lp.solver),
                                            lp.sigma2.stepper(dt, lp.solver), *lp.dims, lp.solver))

    def apply(self, u: SampledSignal) -> SampledSignal:
        self.check_input(u)
        e1, e2 = u.split(list(self.loop.dims))
        return solve_feedback(self.loop, e1, e2, raise_on_failure=True).y

    def __repr__(self):
        return f"ClosedLoopMap({self.loop.sigma1!r} || {self.loop.sigma2!r})"


def closed_loop_passivity_map(loop: FeedbackLoop) -> ClosedLoopMap:
    return ClosedLoopMap(loop)


# --------------------------------------------------------------------------
# loop transformation


@dataclass(frozen=True, eq=False)
class LoopTransformation:
    """Loop shifting by ``eps*I`` around a pair of blocks.

    ``original`` is ``sigma1_tilde || NegFeedbackWithGain(sigma2_inner, eps)``;
    ``transformed`` is ``(sigma1_tilde + eps*I) || sigma2_inner``.  With
    exogenous inputs ``(e1, e2 - eps*e1)`` the transformed loop carries the
    same ``u1`` and ``y2`` as the original, while its ``y1`` and ``u2`` are
    shifted by ``eps*u1`` and ``-eps*y2``.
    """

    original: FeedbackLoop
    transformed: FeedbackLoop
    eps: float

    def transformed_inputs(self, e1: SampledSignal, e2: SampledSignal | None = None):
        if e2 is None:
            e2 = zeros(self.original.dims[1], e1.samples, e1.dt)
        return e1, e2 - self.eps * e1

    def solve(self, e1: SampledSignal, e2: SampledSignal | None = None,
              raise_on_failure: bool = False) -> LoopSolution:
        """Solve through the transformed loop, reporting original-loop signals."""
        if e2 is None:
            e2 = zeros(self.original.dims[1], e1.samples, e1.dt)
        t1, t2 = self.transformed_inputs(e1, e2)
        sol = solve_feedback(self.transformed, t1, t2, raise_on_failure)
        u1, y2 = sol.u1, sol.y2
        y1 = sol.y1 - self.eps * u1
        u2 = e2 + y1
        res = _loop_residual(u1.values, u2.values, y1.values, y2.values, e1.values, e2.values)
        worst = max(sol.residual, float(np.max(res)) if res.size else 0.0)
        return LoopSolution(u1, u2, y1, y2, e1, e2, worst, sol.converged, sol.failed_at,
                            "transformed:" + sol.path)

    def solve_direct(self, e1, e2=None, raise_on_failure=False) -> LoopSolution:
        return solve_feedback(self.original, e1, e2, raise_on_failure)


def loop_transform(sigma1_tilde: SystemOperator, sigma2_inner: SystemOperator, eps: float,
                   solver: SolverOptions = DEFAULT_SOLVER) -> LoopTransformation:
    """Build the ``eps*I`` loop transformation pair."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    dim = sigma1_tilde.input_dim
    original = FeedbackLoop(sigma1_tilde, NegFeedbackWithGain(sigma2_inner, eps, solver), solver)
    transformed = FeedbackLoop(Sum(sigma1_tilde, ScalarGain(eps, dim)), sigma2_inner, solver)
    return LoopTransformation(original, transformed, float(eps))
