"""Sampled stand-ins for finite-horizon L2 / L2e signals.

A :class:`SampledSignal` holds an ``n x N`` array of samples with spacing
``dt``; it is read as a piecewise-constant (sample-and-hold) function on
``[0, N*dt)``.  Inner products are left-endpoint Riemann sums, which are
exact for held signals and make truncation exact at sample boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SampledSignal",
    "Horizon",
    "SignalError",
    "HorizonExceededError",
    "MisalignedShiftError",
    "ConformabilityError",
    "truncate",
    "extend_truncation",
    "shift",
    "inner",
    "inner_truncated",
    "l2_norm",
    "stack",
    "zeros",
    "constant",
    "impulse",
    "from_function",
]

# Horizons are plain nonnegative floats in seconds.
Horizon = float

_SAMPLE_TOL = 1e-9


class SignalError(ValueError):
    """Base class for signal contract violations."""


class HorizonExceededError(SignalError):
    pass


class MisalignedShiftError(SignalError):
    pass


class ConformabilityError(SignalError):
    pass


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Vector-valued sampled signal, immutable.

    Parameters
    ----------
    values : array_like, shape (n, N) or (N,)
        Sample values; a 1-D array is promoted to a single channel.
    dt : float
        Seconds per sample, strictly positive.
    """

    values: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[np.newaxis, :]
        if v.ndim != 2:
            raise SignalError(f"values must be 1-D or 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise SignalError("signal values must be finite")
        dt = float(self.dt)
        if not (dt > 0.0 and math.isfinite(dt)):
            raise SignalError(f"dt must be positive and finite, got {self.dt!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", dt)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.samples * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples) * self.dt

    def with_values(self, values: np.ndarray) -> "SampledSignal":
        return SampledSignal(values, self.dt)

    def channel(self, i: int) -> "SampledSignal":
        return SampledSignal(self.values[i : i + 1], self.dt)

    def split(self, sizes: Sequence[int]) -> list["SampledSignal"]:
        """Split channels into consecutive blocks of the given sizes."""
        if sum(sizes) != self.channels:
            raise ConformabilityError(f"cannot split {self.channels} channels into {list(sizes)}")
        out, start = [], 0
        for s in sizes:
            out.append(SampledSignal(self.values[start : start + s], self.dt))
            start += s
        return out

    def _check(self, other: "SampledSignal") -> None:
        if not isinstance(other, SampledSignal):
            raise TypeError(f"expected SampledSignal, got {type(other).__name__}")
        if other.values.shape != self.values.shape or not _same_dt(self.dt, other.dt):
            raise ConformabilityError(
                f"signals not conformable: {self.values.shape}@{self.dt} vs "
                f"{other.values.shape}@{other.dt}"
            )

    def __add__(self, other: "SampledSignal") -> "SampledSignal":
        self._check(other)
        return SampledSignal(self.values + other.values, self.dt)

    def __sub__(self, other: "SampledSignal") -> "SampledSignal":
        self._check(other)
        return SampledSignal(self.values - other.values, self.dt)

    def __neg__(self) -> "SampledSignal":
        return SampledSignal(-self.values, self.dt)

    def __mul__(self, a: float) -> "SampledSignal":
        return SampledSignal(float(a) * self.values, self.dt)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"SampledSignal(channels={self.channels}, samples={self.samples}, dt={self.dt!r})"


def _same_dt(a: float, b: float) -> bool:
    return abs(a - b) <= _SAMPLE_TOL * max(abs(a), abs(b))


def _kept_samples(v: SampledSignal, T: float) -> int:
    """Number of leading samples with k*dt < T."""
    T = float(T)
    if T < 0 or not math.isfinite(T):
        raise HorizonExceededError(f"horizon must be a finite nonnegative number, got {T!r}")
    ratio = T / v.dt
    if ratio > v.samples * (1 + _SAMPLE_TOL) + _SAMPLE_TOL:
        raise HorizonExceededError(f"horizon {T} exceeds signal window {v.horizon}")
    # sample k is kept iff k < T/dt; snap ratios that are integers up to round-off
    nearest = round(ratio)
    if abs(ratio - nearest) <= _SAMPLE_TOL * max(1.0, ratio):
        count = int(nearest)
    else:
        count = int(math.ceil(ratio))
    return min(count, v.samples)


def truncate(v: SampledSignal, T: Horizon) -> SampledSignal:
    """Return ``P_T v``: samples with ``k*dt < T`` kept, the rest zeroed."""
    k = _kept_samples(v, T)
    out = np.zeros_like(v.values)
    out[:, :k] = v.values[:, :k]
    return SampledSignal(out, v.dt)


def extend_truncation(u: SampledSignal, T: Horizon) -> SampledSignal:
    """Zero extension of ``u`` restricted to ``[0, T)``; same samples as :func:`truncate`."""
    return truncate(u, T)


def shift(v: SampledSignal, T: Horizon) -> SampledSignal:
    """Delay by ``T`` seconds: ``(S_T v)(t) = v(t - T)``, tail dropped."""
    T = float(T)
    if T < 0:
        raise MisalignedShiftError(f"shift must be nonnegative, got {T}")
    ratio = T / v.dt
    m = round(ratio)
    if abs(ratio - m) > _SAMPLE_TOL * max(1.0, abs(ratio)):
        raise MisalignedShiftError(f"shift {T} is not a multiple of dt={v.dt}")
    m = int(m)
    out = np.zeros_like(v.values)
    if m < v.samples:
        out[:, m:] = v.values[:, : v.samples - m]
    return SampledSignal(out, v.dt)


def inner_truncated(u: SampledSignal, y: SampledSignal, T: Horizon) -> float:
    """Riemann sum of ``u_k . y_k * dt`` over samples with ``k*dt < T``."""
    u._check(y)
    k = _kept_samples(u, T)
    return float(np.sum(u.values[:, :k] * y.values[:, :k]) * u.dt)


def inner(u: SampledSignal, y: SampledSignal) -> float:
    """Full-window inner product ``<u, y>``."""
    u._check(y)
    return float(np.sum(u.values * y.values) * u.dt)


def l2_norm(v: SampledSignal) -> float:
    return math.sqrt(float(np.sum(v.values * v.values)) * v.dt)


def stack(signals: Iterable[SampledSignal]) -> SampledSignal:
    """Concatenate channels of signals that share ``dt`` and sample count."""
    signals = list(signals)
    if not signals:
        raise ConformabilityError("nothing to stack")
    first = signals[0]
    for s in signals[1:]:
        if s.samples != first.samples or not _same_dt(s.dt, first.dt):
            raise ConformabilityError("stacked signals must share dt and sample count")
    return SampledSignal(np.vstack([s.values for s in signals]), first.dt)


def zeros(channels: int, samples: int, dt: float) -> SampledSignal:
    return SampledSignal(np.zeros((channels, samples)), dt)


def constant(value: float | Sequence[float], samples: int, dt: float) -> SampledSignal:
    col = np.atleast_1d(np.asarray(value, dtype=float))[:, np.newaxis]
    return SampledSignal(np.repeat(col, samples, axis=1), dt)


def impulse(channels: int, samples: int, dt: float, at: int = 0, channel: int = 0,
            area: float = 1.0) -> SampledSignal:
    """Single held sample of height ``area/dt`` at index ``at``."""
    v = np.zeros((channels, samples))
    v[channel, at] = area / dt
    return SampledSignal(v, dt)


def from_function(f, samples: int, dt: float) -> SampledSignal:
    """Sample ``f(t)`` (vectorized, returning shape (N,) or (n, N)) at ``k*dt``."""
    t = np.arange(samples) * dt
    return SampledSignal(np.asarray(f(t), dtype=float), dt)
