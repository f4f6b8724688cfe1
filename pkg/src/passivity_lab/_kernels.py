"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the
pure-Python kernels take over.  :func:`use_backend` switches explicitly,
which the tests and the benchmark use to compare both.
"""

from __future__ import annotations

from contextlib import contextmanager

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels

SATURATION = _pykernels.SATURATION
CUBIC = _pykernels.CUBIC
DEADZONE = _pykernels.DEADZONE
RELU = _pykernels.RELU
NEGFB = _pykernels.NEGFB


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active.NAME


def use_backend(name: str) -> None:
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


@contextmanager
def backend(name: str):
    previous = _active.NAME
    use_backend(name)
    try:
        yield
    finally:
        use_backend(previous)


def lti_march(Ad, Bd, Cd, Dd, x0, U, return_states=False):
    return _active.lti_march(Ad, Bd, Cd, Dd, x0, U, return_states)


def lure_march(Ad, Bd, c, d, orient, code, params, e1, e2, x0, damping, tol, max_iter):
    return _active.lure_march(Ad, Bd, c, float(d), int(orient), int(code), list(params),
                              e1, e2, x0, float(damping), float(tol), int(max_iter))


def scalar_loop_solve(code, params, b, d, damping, tol, max_iter):
    return _active.scalar_loop_solve(int(code), list(params), float(b), float(d),
                                     float(damping), float(tol), int(max_iter))
