"""Causal input-output operators on sampled signals.

Operators are immutable descriptions.  Linear time-invariant pieces reduce
to a :class:`DiscreteRealization`, which is marched by the compiled kernel;
memoryless pieces are evaluated column-wise; anything else falls back to a
per-sample stepper.

LTI discretization
------------------
Inputs are held constant over each sample interval (zero-order hold) and the
state update is exact.  By default the output sample is the *average* of the
continuous output over the hold interval, so that

    sum_k u_k . y_k * dt  ==  integral of u(t) . y(t) dt

exactly for held inputs.  Supply-rate integrals (and therefore every
passivity inequality) are then inherited by the sampled operator without
discretization error.  ``sampling="point"`` gives the classical
``y_k = C x(t_k) + D u_k`` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.signal

from . import _kernels
from ._algebra import solve_fixed_point, solve_fixed_point_columns
from .errors import (
    AlgebraicLoopSingularError,
    DegenerateEnsembleError,
    DimensionMismatchError,
    IllPosedAtSampleError,
    PoleOnGridError,
    UnsupportedOperatorError,
)
from .signals import SampledSignal, l2_norm, truncate

__all__ = [
    "DiscreteRealization",
    "SystemOperator",
    "LtiStateSpace",
    "StaticMap",
    "ScalarGain",
    "Sum",
    "Cascade",
    "NegFeedbackWithGain",
    "GainEstimate",
    "STATIC_MAPS",
    "static_map",
    "identity",
    "apply",
    "lipschitz_gain_estimate",
    "lti_frequency_response",
    "feedback_realization",
    "SolverOptions",
]

SINGULAR_COND = 1e12


@dataclass(frozen=True)
class SolverOptions:
    """Per-sample algebraic loop settings."""

    residual_tol: float = 1e-10
    max_iter: int = 200
    damping: float = 0.5

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


DEFAULT_SOLVER = SolverOptions()


# --------------------------------------------------------------------------
# discrete realizations


@dataclass(frozen=True, eq=False)
class DiscreteRealization:
    """``x+ = Ad x + Bd u``, ``y = Cd x + Dd u`` with initial state ``x0``."""

    Ad: np.ndarray
    Bd: np.ndarray
    Cd: np.ndarray
    Dd: np.ndarray
    x0: np.ndarray

    @property
    def states(self) -> int:
        return self.Ad.shape[0]

    def simulate(self, u: SampledSignal, return_states: bool = False):
        out = _kernels.lti_march(self.Ad, self.Bd, self.Cd, self.Dd, self.x0, u.values,
                                 return_states)
        if return_states:
            Y, X = out
            return SampledSignal(Y, u.dt), X
        return SampledSignal(out, u.dt)

    def parallel(self, other: "DiscreteRealization") -> "DiscreteRealization":
        return DiscreteRealization(
            scipy.linalg.block_diag(self.Ad, other.Ad),
            np.vstack([self.Bd, other.Bd]),
            np.hstack([self.Cd, other.Cd]),
            self.Dd + other.Dd,
            np.concatenate([self.x0, other.x0]),
        )

    def series(self, second: "DiscreteRealization") -> "DiscreteRealization":
        """``self`` followed by ``second``."""
        m1, m2 = self.states, second.states
        Ad = np.zeros((m1 + m2, m1 + m2))
        Ad[:m1, :m1] = self.Ad
        Ad[m1:, :m1] = second.Bd @ self.Cd
        Ad[m1:, m1:] = second.Ad
        return DiscreteRealization(
            Ad,
            np.vstack([self.Bd, second.Bd @ self.Dd]),
            np.hstack([second.Dd @ self.Cd, second.Cd]),
            second.Dd @ self.Dd,
            np.concatenate([self.x0, second.x0]),
        )


def feedback_realization(r1: DiscreteRealization, r2: DiscreteRealization) -> DiscreteRealization:
    """Closed loop ``u1 = e1 - y2``, ``u2 = e2 + y1`` of two discrete blocks.

    Inputs are stacked ``(e1, e2)``; outputs are stacked ``(u1, u2, y1, y2)``.
    Raises :class:`AlgebraicLoopSingularError` when ``I + D2 D1`` is singular.
    """
    n1, p1 = r1.Dd.shape[1], r1.Dd.shape[0]
    n2, p2 = r2.Dd.shape[1], r2.Dd.shape[0]
    if p1 != n2 or p2 != n1:
        raise DimensionMismatchError(
            f"loop dimensions do not match: sigma1 {n1}->{p1}, sigma2 {n2}->{p2}")
    m1, m2 = r1.states, r2.states
    L = np.eye(n1) + r2.Dd @ r1.Dd
    if not np.all(np.isfinite(L)) or np.linalg.cond(L) > SINGULAR_COND:
        raise AlgebraicLoopSingularError(
            f"I + D2 D1 is singular (cond = {np.linalg.cond(L):.3e})")
    M = np.linalg.inv(L)
    m = m1 + m2
    ne = n1 + n2
    # u1 = M (e1 - D2 e2 - D2 C1 x1 - C2 x2)
    Fx_u1 = M @ np.hstack([-r2.Dd @ r1.Cd, -r2.Cd])
    Fe_u1 = M @ np.hstack([np.eye(n1), -r2.Dd])
    # y1 = C1 x1 + D1 u1
    Fx_y1 = np.hstack([r1.Cd, np.zeros((p1, m2))]) + r1.Dd @ Fx_u1
    Fe_y1 = r1.Dd @ Fe_u1
    # u2 = e2 + y1
    Fx_u2 = Fx_y1
    Fe_u2 = np.hstack([np.zeros((n2, n1)), np.eye(n2)]) + Fe_y1
    # y2 = C2 x2 + D2 u2
    Fx_y2 = np.hstack([np.zeros((p2, m1)), r2.Cd]) + r2.Dd @ Fx_u2
    Fe_y2 = r2.Dd @ Fe_u2
    Bblk = scipy.linalg.block_diag(r1.Bd, r2.Bd)
    Fx_u = np.vstack([Fx_u1, Fx_u2])
    Fe_u = np.vstack([Fe_u1, Fe_u2])
    Ad = scipy.linalg.block_diag(r1.Ad, r2.Ad) + Bblk @ Fx_u
    Bd = Bblk @ Fe_u
    Cd = np.vstack([Fx_u1, Fx_u2, Fx_y1, Fx_y2]).reshape(n1 + n2 + p1 + p2, m)
    Dd = np.vstack([Fe_u1, Fe_u2, Fe_y1, Fe_y2]).reshape(n1 + n2 + p1 + p2, ne)
    return DiscreteRealization(Ad.reshape(m, m), Bd.reshape(m, ne), Cd, Dd,
                               np.concatenate([r1.x0, r2.x0]))


# --------------------------------------------------------------------------
# steppers: one-sample-at-a-time evaluation for the generic paths


class _RealizationStepper:
    def __init__(self, real: DiscreteRealization):
        self.r = real
        self.x = np.array(real.x0, dtype=float)
        self.feedthrough = real.Dd

    def output(self, u):
        return self.r.Cd @ self.x + self.r.Dd @ u

    def commit(self, u):
        self.x = self.r.Ad @ self.x + self.r.Bd @ u


class _MemorylessStepper:
    feedthrough = None

    def __init__(self, op: "SystemOperator"):
        self.op = op

    def output(self, u):
        return self.op.memoryless_eval(np.asarray(u, dtype=float)[:, np.newaxis])[:, 0]

    def commit(self, u):
        pass


class _SumStepper:
    def __init__(self, a, b):
        self.a, self.b = a, b
        fa, fb = a.feedthrough, b.feedthrough
        self.feedthrough = None if fa is None or fb is None else fa + fb

    def output(self, u):
        return self.a.output(u) + self.b.output(u)

    def commit(self, u):
        self.a.commit(u)
        self.b.commit(u)


class _CascadeStepper:
    def __init__(self, first, second):
        self.f, self.s = first, second
        ff, fs = first.feedthrough, second.feedthrough
        self.feedthrough = None if ff is None or fs is None else fs @ ff

    def output(self, u):
        return self.s.output(self.f.output(u))

    def commit(self, u):
        y = self.f.output(u)
        self.f.commit(u)
        self.s.commit(y)


class _NegFeedbackStepper:
    """``y = inner(u~ - eps*y)`` solved per sample."""

    feedthrough = None

    def __init__(self, inner, eps, solver: SolverOptions):
        self.inner, self.eps, self.solver = inner, eps, solver
        self._last = None

    def _solve(self, ut):
        ut = np.asarray(ut, dtype=float)
        if self._last is not None and np.array_equal(self._last[0], ut):
            return self._last[1]
        s = self.solver
        y, res, ok, trace = solve_fixed_point(
            lambda y: self.inner.output(ut - self.eps * y),
            self.inner.output(ut), s.damping, s.residual_tol, s.max_iter, history=True)
        if not ok:
            raise IllPosedAtSampleError(-1, trace, "negative-feedback block did not converge")
        self._last = (ut.copy(), y)
        return y

    def output(self, ut):
        return self._solve(ut)

    def commit(self, ut):
        y = self._solve(ut)
        self.inner.commit(np.asarray(ut, dtype=float) - self.eps * y)
        self._last = None


def march(stepper, u: SampledSignal, output_dim: int) -> SampledSignal:
    """Evaluate a stepper over every sample of ``u``."""
    Y = np.empty((output_dim, u.samples))
    cols = u.values
    for k in range(u.samples):
        uk = cols[:, k]
        try:
            Y[:, k] = stepper.output(uk)
        except IllPosedAtSampleError as exc:
            raise IllPosedAtSampleError(k, exc.residual_history) from None
        stepper.commit(uk)
    return SampledSignal(Y, u.dt)


# --------------------------------------------------------------------------
# operators


class SystemOperator:
    """Causal map between sampled signals.

    Subclasses set ``input_dim`` / ``output_dim`` and override whichever of
    :meth:`realize`, :meth:`memoryless_eval` and :meth:`stepper` applies.
    """

    input_dim: int
    output_dim: int
    causal = True

    @property
    def memoryless(self) -> bool:
        return False

    @property
    def time_invariant(self) -> bool:
        return True

    def realize(self, dt: float) -> DiscreteRealization | None:
        """Discrete LTI realization, or ``None`` for nonlinear operators."""
        return None

    def memoryless_eval(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stepper(self, dt: float, solver: SolverOptions = DEFAULT_SOLVER):
        real = self.realize(dt)
        if real is not None:
            return _RealizationStepper(real)
        if self.memoryless:
            return _MemorylessStepper(self)
        raise NotImplementedError(f"{type(self).__name__} has no stepper")

    def check_input(self, u: SampledSignal) -> None:
        if u.channels != self.input_dim:
            raise DimensionMismatchError(
                f"{type(self).__name__} expects {self.input_dim} input channel(s), "
                f"got {u.channels}")

    def apply(self, u: SampledSignal) -> SampledSignal:
        self.check_input(u)
        real = self.realize(u.dt)
        if real is not None:
            return real.simulate(u)
        if self.memoryless:
            return u.with_values(self.memoryless_eval(u.values))
        return march(self.stepper(u.dt), u, self.output_dim)

    def __call__(self, u: SampledSignal) -> SampledSignal:
        return self.apply(u)


def apply(op: SystemOperator, u: SampledSignal) -> SampledSignal:
    """Evaluate ``op`` on ``u``; same ``dt`` and sample count."""
    return op.apply(u)


def _as_matrix(a, rows=None, cols=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        a = np.zeros((rows or 0, cols or 0))
    return a


def _van_loan(A: np.ndarray, dt: float):
    """``Phi = e^{A dt}``, ``G1 = int_0^dt e^{As} ds``, ``G2 = int_0^dt int_0^t e^{As} ds dt``."""
    m = A.shape[0]
    M = np.zeros((3 * m, 3 * m))
    M[:m, :m] = A
    M[:m, m:2 * m] = np.eye(m)
    M[m:2 * m, 2 * m:] = np.eye(m)
    E = scipy.linalg.expm(M * dt)
    return E[:m, :m], E[:m, m:2 * m], E[:m, 2 * m:]


class LtiStateSpace(SystemOperator):
    """Continuous-time ``dx/dt = Ax + Bu``, ``y = Cx + Du``.

    Parameters
    ----------
    A, B, C, D : array_like
        State-space matrices; ``A`` may be empty for a pure feedthrough.
    x0 : array_like, optional
        Initial state (zero by default).  Nonzero initial states make the
        operator affine and are excluded from passivity estimation.
    sampling : {"average", "point"}
        Output sample convention; see the module docstring.
    """

    def __init__(self, A, B, C, D, x0=None, sampling: str = "average"):
        D = _as_matrix(D)
        p, n = D.shape
        A = np.asarray(A, dtype=float)
        m = 0 if A.size == 0 else A.shape[0]
        self.A = _as_matrix(A, m, m).reshape(m, m)
        self.B = _as_matrix(B, m, n).reshape(m, n) if m else np.zeros((0, n))
        self.C = _as_matrix(C, p, m).reshape(p, m) if m else np.zeros((p, 0))
        self.D = D
        if self.A.shape != (m, m) or self.B.shape != (m, n) or self.C.shape != (p, m):
            raise DimensionMismatchError("inconsistent state-space dimensions")
        self.x0 = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float).reshape(m)
        if sampling not in ("average", "point"):
            raise ValueError(f"unknown sampling {sampling!r}")
        self.sampling = sampling
        self.input_dim, self.output_dim = n, p
        self._cache: dict[float, DiscreteRealization] = {}

    @classmethod
    def from_tf(cls, num: Sequence[float], den: Sequence[float], **kw) -> "LtiStateSpace":
        """SISO realization of ``num(s)/den(s)`` (descending powers)."""
        num = np.trim_zeros(np.atleast_1d(np.asarray(num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(den, dtype=float)), "f")
        if den.size == 0:
            raise ValueError("denominator is zero")
        if num.size > den.size:
            raise ValueError("transfer function must be proper")
        if den.size == 1:
            # static gain; tf2ss would add a spurious state at s = 0
            k = num[0] / den[0] if num.size else 0.0
            return cls(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[k]], **kw)
        A, B, C, D = scipy.signal.tf2ss(num, den)
        return cls(A, B, C, D, **kw)

    @property
    def states(self) -> int:
        return self.A.shape[0]

    @property
    def time_invariant(self) -> bool:
        return not np.any(self.x0)

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A) if self.states else np.zeros(0, dtype=complex)

    def is_stable(self) -> bool:
        return bool(np.all(self.poles().real < 0))

    def realize(self, dt: float) -> DiscreteRealization:
        dt = float(dt)
        real = self._cache.get(dt)
        if real is None:
            m = self.states
            if m:
                Phi, G1, G2 = _van_loan(self.A, dt)
                Bd = G1 @ self.B
                if self.sampling == "average":
                    Cd = self.C @ G1 / dt
                    Dd = self.C @ G2 @ self.B / dt + self.D
                else:
                    Cd, Dd = self.C, self.D
            else:
                Phi, Bd, Cd, Dd = self.A, self.B, self.C, self.D
            real = DiscreteRealization(Phi, Bd, Cd, Dd.copy(), self.x0.copy())
            self._cache[dt] = real
        return real

    def simulate(self, u: SampledSignal, return_states: bool = False):
        """Like :meth:`apply`, optionally also returning states at ``t_0..t_N``."""
        self.check_input(u)
        return self.realize(u.dt).simulate(u, return_states)

    def frequency_response(self, omegas) -> np.ndarray:
        return lti_frequency_response(self, omegas)

    def __repr__(self):
        return f"LtiStateSpace(states={self.states}, inputs={self.input_dim}, outputs={self.output_dim})"


def lti_frequency_response(op: LtiStateSpace, omegas) -> np.ndarray:
    """``G(jw) = C (jwI - A)^{-1} B + D`` for each ``w``; shape ``(len(w), p, n)``."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if np.any(omegas <= 0) or not np.all(np.isfinite(omegas)):
        raise ValueError("frequencies must be positive and finite")
    out = np.empty((omegas.size, op.output_dim, op.input_dim), dtype=complex)
    poles = op.poles()
    eye = np.eye(op.states)
    for i, w in enumerate(omegas):
        s = 1j * w
        if poles.size and np.min(np.abs(poles - s)) <= 1e-12 * max(1.0, w):
            raise PoleOnGridError(f"j*{w} coincides with a pole")
        if op.states:
            out[i] = op.C @ np.linalg.solve(s * eye - op.A, op.B) + op.D
        else:
            out[i] = op.D
    return out


class ScalarGain(SystemOperator):
    """``y = k u`` on ``dim`` channels; ``k = 1`` is the identity."""

    def __init__(self, k: float, dim: int = 1):
        self.k = float(k)
        self.input_dim = self.output_dim = int(dim)

    @property
    def memoryless(self) -> bool:
        return True

    def memoryless_eval(self, U):
        return self.k * np.asarray(U, dtype=float)

    def realize(self, dt):
        n = self.input_dim
        return DiscreteRealization(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((n, 0)),
                                   self.k * np.eye(n), np.zeros(0))

    def stepper(self, dt, solver=DEFAULT_SOLVER):
        return _RealizationStepper(self.realize(dt))

    def apply(self, u):
        self.check_input(u)
        if self.k == 1.0:
            return u
        return u.with_values(self.k * u.values)

    def __repr__(self):
        return f"ScalarGain({self.k!r}, dim={self.input_dim})"


def identity(dim: int = 1) -> ScalarGain:
    return ScalarGain(1.0, dim)


class StaticMap(SystemOperator):
    """Memoryless map applied sample by sample.

    Parameters
    ----------
    fn : callable
        Vectorized map on arrays of shape ``(dim, K)``.
    lipschitz : float
        Caller-declared Lipschitz constant (not verified here).
    dim : int
        Number of channels (same in and out).
    name, params : optional
        Registry name and parameters, used for serialization and by the
        compiled loop kernel.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], lipschitz: float, dim: int = 1,
                 name: str | None = None, params: dict | None = None, code: int | None = None):
        if not (lipschitz >= 0 and math.isfinite(lipschitz)):
            raise ValueError("a finite Lipschitz constant must be declared")
        self.fn = fn
        self.lipschitz = float(lipschitz)
        self.input_dim = self.output_dim = int(dim)
        self.name = name
        self.params = dict(params or {})
        self.code = code

    @property
    def memoryless(self) -> bool:
        return True

    def memoryless_eval(self, U):
        return np.asarray(self.fn(np.asarray(U, dtype=float)), dtype=float)

    def kernel_params(self) -> list[float]:
        """Parameter vector for the compiled kernel (registered maps only)."""
        p = self.params
        if self.code == _kernels.SATURATION:
            return [p["level"], 0.0, 0.0, 0.0]
        if self.code == _kernels.CUBIC:
            return [p["a"], p["b"], 0.0, 0.0]
        if self.code == _kernels.DEADZONE:
            return [p["width"], 0.0, 0.0, 0.0]
        return [0.0, 0.0, 0.0, 0.0]

    def __repr__(self):
        return f"StaticMap({self.name or self.fn!r}, {self.params})"


def _saturation(level: float = 1.0, dim: int = 1) -> StaticMap:
    level = float(level)
    return StaticMap(lambda u: np.clip(u, -level, level), 1.0, dim, "saturation",
                     {"level": level}, _kernels.SATURATION)


def _cubic(a: float = 1.0, b: float = 1.0, bound: float = 10.0, dim: int = 1) -> StaticMap:
    a, b = float(a), float(b)
    # a u + b u^3 is only locally Lipschitz; the constant holds on |u| <= bound
    return StaticMap(lambda u: a * u + b * u * u * u, abs(a) + 3.0 * abs(b) * bound ** 2, dim,
                     "cubic", {"a": a, "b": b, "bound": float(bound)}, _kernels.CUBIC)


def _deadzone(width: float = 0.5, dim: int = 1) -> StaticMap:
    w = float(width)
    return StaticMap(lambda u: np.where(u > w, u - w, np.where(u < -w, u + w, 0.0)), 1.0, dim,
                     "deadzone", {"width": w}, _kernels.DEADZONE)


def _relu(dim: int = 1) -> StaticMap:
    return StaticMap(lambda u: np.maximum(u, 0.0), 1.0, dim, "relu", {}, _kernels.RELU)


STATIC_MAPS: dict[str, Callable[..., StaticMap]] = {
    "saturation": _saturation,
    "cubic": _cubic,
    "deadzone": _deadzone,
    "relu": _relu,
}


def static_map(name: str, **params) -> StaticMap:
    """Build a registered static map by name."""
    try:
        factory = STATIC_MAPS[name]
    except KeyError:
        raise ValueError(f"unknown static map {name!r}; known: {sorted(STATIC_MAPS)}") from None
    return factory(**params)


class Sum(SystemOperator):
    """Parallel connection ``y = left(u) + right(u)``."""

    def __init__(self, left: SystemOperator, right: SystemOperator):
        if (left.input_dim, left.output_dim) != (right.input_dim, right.output_dim):
            raise DimensionMismatchError("summed operators must share dimensions")
        self.left, self.right = left, right
        self.input_dim, self.output_dim = left.input_dim, left.output_dim

    @property
    def memoryless(self):
        return self.left.memoryless and self.right.memoryless

    @property
    def time_invariant(self):
        return self.left.time_invariant and self.right.time_invariant

    def memoryless_eval(self, U):
        return self.left.memoryless_eval(U) + self.right.memoryless_eval(U)

    def realize(self, dt):
        a, b = self.left.realize(dt), self.right.realize(dt)
        if a is None or b is None:
            return None
        return a.parallel(b)

    def stepper(self, dt, solver=DEFAULT_SOLVER):
        real = self.realize(dt)
        if real is not None:
            return _RealizationStepper(real)
        return _SumStepper(self.left.stepper(dt, solver), self.right.stepper(dt, solver))

    def apply(self, u):
        if self.memoryless or self.realize(u.dt) is not None:
            return super().apply(u)
        self.check_input(u)
        return self.left.apply(u) + self.right.apply(u)


class Cascade(SystemOperator):
    """Series connection ``y = second(first(u))``."""

    def __init__(self, first: SystemOperator, second: SystemOperator):
        if first.output_dim != second.input_dim:
            raise DimensionMismatchError("cascade dimensions do not chain")
        self.first, self.second = first, second
        self.input_dim, self.output_dim = first.input_dim, second.output_dim

    @property
    def memoryless(self):
        return self.first.memoryless and self.second.memoryless

    @property
    def time_invariant(self):
        return self.first.time_invariant and self.second.time_invariant

    def memoryless_eval(self, U):
        return self.second.memoryless_eval(self.first.memoryless_eval(U))

    def realize(self, dt):
        a, b = self.first.realize(dt), self.second.realize(dt)
        if a is None or b is None:
            return None
        return a.series(b)

    def stepper(self, dt, solver=DEFAULT_SOLVER):
        real = self.realize(dt)
        if real is not None:
            return _RealizationStepper(real)
        return _CascadeStepper(self.first.stepper(dt, solver), self.second.stepper(dt, solver))

    def apply(self, u):
        if self.memoryless or self.realize(u.dt) is not None:
            return super().apply(u)
        self.check_input(u)
        return self.second.apply(self.first.apply(u))


class NegFeedbackWithGain(SystemOperator):
    """``inner`` with output fed back through ``eps*I``: ``y = inner(u~ - eps*y)``."""

    def __init__(self, inner: SystemOperator, eps: float, solver: SolverOptions = DEFAULT_SOLVER):
        if not eps > 0:
            raise ValueError("eps must be positive")
        if inner.input_dim != inner.output_dim:
            raise DimensionMismatchError("inner block must be square")
        self.inner, self.eps, self.solver = inner, float(eps), solver
        self.input_dim = self.output_dim = inner.input_dim

    @property
    def memoryless(self):
        return self.inner.memoryless

    @property
    def time_invariant(self):
        return self.inner.time_invariant

    @property
    def code(self):
        """Kernel code when the inner block is a registered SISO static map."""
        inner = self.inner
        if isinstance(inner, StaticMap) and inner.code is not None and inner.input_dim == 1:
            return _kernels.NEGFB
        return None

    def kernel_params(self) -> list[float]:
        if self.code is None:
            raise UnsupportedOperatorError("no kernel form for this feedback block")
        p = self.inner.kernel_params()
        return [p[0], p[1], self.eps, float(self.inner.code)]

    def memoryless_eval(self, U):
        U = np.asarray(U, dtype=float)
        s = self.solver
        f = self.inner.memoryless_eval
        Y0 = f(U)
        if U.shape[0] == 1:
            u0 = U[0]
            y, res, ok = solve_fixed_point_columns(
                lambda y, idx: f((u0[idx] - self.eps * y)[np.newaxis, :])[0],
                Y0[0], s.damping, s.residual_tol, s.max_iter)
            if not ok.all():
                k = int(np.flatnonzero(~ok)[0])
                raise IllPosedAtSampleError(k, [float(res[k])])
            return y[np.newaxis, :]
        Y = np.empty_like(U)
        for k in range(U.shape[1]):
            uk = U[:, k]
            y, res, ok, trace = solve_fixed_point(
                lambda y: f((uk - self.eps * y)[:, np.newaxis])[:, 0],
                Y0[:, k], s.damping, s.residual_tol, s.max_iter, history=True)
            if not ok:
                raise IllPosedAtSampleError(k, trace)
            Y[:, k] = y
        return Y

    def realize(self, dt):
        inner = self.inner.realize(dt)
        if inner is None:
            return None
        n = self.input_dim
        gain = DiscreteRealization(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((n, 0)),
                                   self.eps * np.eye(n), np.zeros(0))
        loop = feedback_realization(inner, gain)
        # keep only the y1 rows and the e1 columns
        rows = slice(2 * n, 3 * n)
        return DiscreteRealization(loop.Ad, loop.Bd[:, :n], loop.Cd[rows], loop.Dd[rows, :n],
                                   loop.x0)

    def stepper(self, dt, solver=DEFAULT_SOLVER):
        real = self.realize(dt)
        if real is not None:
            return _RealizationStepper(real)
        if self.memoryless:
            return _MemorylessStepper(self)
        return _NegFeedbackStepper(self.inner.stepper(dt, solver), self.eps, self.solver)

    def __repr__(self):
        return f"NegFeedbackWithGain({self.inner!r}, eps={self.eps!r})"


# --------------------------------------------------------------------------
# Lipschitz gain


@dataclass(frozen=True)
class GainEstimate:
    """Lower bound on an operator gain, achieved by ``witness``.

    ``lower_bound == ||op(witness)|| / ||witness||`` on the full window.
    """

    lower_bound: float
    witness: SampledSignal
    ensemble_size: int
    method: str = "random"
    horizon: float | None = None
    is_lower_bound: bool = field(default=True, init=False)


GAIN_METHODS = ("random", "power-iteration-like", "frequency-sweep")


def dyadic_horizons(window: float, levels: int = 5) -> list[float]:
    """``[W/2^(levels-1), ..., W/2, W]``."""
    return [window / 2 ** j for j in range(levels - 1, -1, -1)]


def lipschitz_gain_estimate(op: SystemOperator, ensemble: Sequence[SampledSignal],
                            method: str = "random", levels: int = 5) -> GainEstimate:
    """Largest ``||P_T op u|| / ||P_T u||`` over the ensemble and dyadic horizons.

    The best ``(u, T)`` is returned as the witness ``P_T u``, whose full-window
    ratio is reported; by causality it is at least the truncated ratio.  The
    result is a lower bound on the operator's Lipschitz gain.
    """
    if method not in GAIN_METHODS:
        raise ValueError(f"unknown method {method!r}")
    ensemble = list(ensemble)
    if not ensemble:
        raise DegenerateEnsembleError("empty ensemble")
    best = (-1.0, None, None)
    for u in ensemble:
        if l2_norm(u) == 0.0:
            continue
        y = op.apply(u)
        for T in dyadic_horizons(u.horizon, levels):
            uT = truncate(u, T)
            nu = l2_norm(uT)
            if nu == 0.0:
                continue
            ratio = l2_norm(truncate(y, T)) / nu
            if ratio > best[0]:
                best = (ratio, uT, T)
    if best[1] is None:
        raise DegenerateEnsembleError("ensemble contains only zero signals")
    witness = best[1]
    lb = l2_norm(op.apply(witness)) / l2_norm(witness)
    return GainEstimate(lb, witness, len(ensemble), method, best[2])
