"""File formats: signal CSV + sidecar, operator and loop JSON, report JSON.

Reports are written with sorted keys and every float printed with 17
significant digits, so identical inputs give byte-identical files.
Non-finite floats are written as the strings ``"inf"``, ``"-inf"``, ``"nan"``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import PassivityLabError
from .signals import SampledSignal
from .systems import (
    Cascade,
    LtiStateSpace,
    NegFeedbackWithGain,
    ScalarGain,
    SolverOptions,
    StaticMap,
    Sum,
    SystemOperator,
    static_map,
)

__all__ = [
    "FormatError",
    "read_signal",
    "write_signal",
    "sidecar_path",
    "operator_from_dict",
    "operator_to_dict",
    "read_operator",
    "write_operator",
    "loop_from_dict",
    "loop_to_dict",
    "read_loop",
    "write_loop",
    "dumps",
    "write_json",
    "config_hash",
    "to_jsonable",
]

UNIFORM_RTOL = 1e-9


class FormatError(PassivityLabError, ValueError):
    """Malformed or inconsistent input file."""


# --------------------------------------------------------------------------
# deterministic JSON


def _float_token(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def to_jsonable(obj):
    """Convert numpy scalars/arrays, tuples and dataclass-like values to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [[float(z.real), float(z.imag)] for z in obj.ravel()]
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(obj, indent: int, level: int, out: list):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(obj)
        for i, k in enumerate(keys):
            out.append(pad + json.dumps(k) + ": ")
            _emit(obj[k], indent, level + 1, out)
            out.append(",\n" if i < len(keys) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _emit(v, indent, level + 1, out)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_float_token(obj))
    elif obj is None:
        out.append("null")
    else:
        out.append(json.dumps(obj))


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON text: sorted keys, floats at 17 significant digits."""
    out: list[str] = []
    _emit(to_jsonable(obj), indent, 0, out)
    return "".join(out) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def config_hash(config) -> str:
    """sha256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(dumps(config, indent=0).encode()).hexdigest()


# --------------------------------------------------------------------------
# signals


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json")


def write_signal(path, signal: SampledSignal) -> Path:
    """Write ``t,ch0,ch1,...`` CSV plus the ``{dt, channels, samples}`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(signal.samples) * signal.dt
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"ch{i}" for i in range(signal.channels)])
        vals = signal.values
        for k in range(signal.samples):
            w.writerow([format(t[k], ".17g")] + [format(v, ".17g") for v in vals[:, k]])
    write_json(sidecar_path(path), {"dt": float(signal.dt), "channels": signal.channels,
                                    "samples": signal.samples})
    return path


def read_signal(path) -> SampledSignal:
    """Read a signal CSV, checking the time grid and the sidecar when present."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read signal {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t" or header[1:] != [f"ch{i}" for i in range(len(header) - 1)]:
        raise FormatError(f"{path}: header must be t,ch0,ch1,...")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != len(header):
        raise FormatError(f"{path}: need at least two rows of {len(header)} columns")
    t = data[:, 0]
    meta = None
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except (OSError, ValueError) as exc:
            raise FormatError(f"{side}: {exc}") from exc
    dt = float(meta["dt"]) if meta is not None else (t[-1] - t[0]) / (t.size - 1)
    if not dt > 0:
        raise FormatError(f"{path}: time column must increase")
    tol = UNIFORM_RTOL * dt
    if abs(t[0]) > tol or np.any(np.abs(np.diff(t) - dt) > tol):
        raise FormatError(f"{path}: non-uniform time grid (relative tolerance {UNIFORM_RTOL:g})")
    if meta is not None:
        if int(meta["channels"]) != data.shape[1] - 1 or int(meta["samples"]) != data.shape[0]:
            raise FormatError(f"{side}: channels/samples disagree with {path.name}")
    return SampledSignal(np.ascontiguousarray(data[:, 1:].T), dt)


# --------------------------------------------------------------------------
# operators


def _matrix(obj, name):
    try:
        a = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{name} must be a numeric nested array") from exc
    if a.ndim == 1 and a.size == 0:
        return a.reshape(0, 0)
    if a.ndim != 2:
        raise FormatError(f"{name} must be a row-major 2-d array")
    return a


def operator_from_dict(d: dict, solver: SolverOptions | None = None) -> SystemOperator:
    """Build an operator from its ``kind``-tagged JSON object."""
    if not isinstance(d, dict) or "kind" not in d:
        raise FormatError("operator objects need a 'kind' field")
    kind = d["kind"]
    try:
        if kind == "lti":
            sampling = d.get("sampling", "average")
            if "num" in d:
                op = LtiStateSpace.from_tf(d["num"], d["den"], x0=d.get("x0"), sampling=sampling)
            else:
                A = _matrix(d["A"], "A")
                m = A.shape[0]
                B = _matrix(d["B"], "B") if m else np.zeros((0, len(d["D"][0])))
                C = _matrix(d["C"], "C") if m else np.zeros((len(d["D"]), 0))
                op = LtiStateSpace(A, B, C, _matrix(d["D"], "D"), d.get("x0"), sampling)
            return op
        if kind == "static":
            params = dict(d.get("params", {}))
            if "dim" in d:
                params["dim"] = d["dim"]
            return static_map(d["name"], **params)
        if kind == "gain":
            return ScalarGain(d["k"], d.get("dim", 1))
        if kind == "sum":
            return Sum(operator_from_dict(d["left"], solver), operator_from_dict(d["right"], solver))
        if kind == "cascade":
            return Cascade(operator_from_dict(d["first"], solver), operator_from_dict(d["second"], solver))
        if kind == "negfb":
            inner = operator_from_dict(d["inner"], solver)
            return NegFeedbackWithGain(inner, d["eps"], solver or SolverOptions())
    except KeyError as exc:
        raise FormatError(f"{kind} operator is missing field {exc}") from exc
    except TypeError as exc:
        raise FormatError(f"bad {kind} operator: {exc}") from exc
    raise FormatError(f"unknown operator kind {kind!r}")


def operator_to_dict(op: SystemOperator) -> dict:
    """Inverse of :func:`operator_from_dict` for the built-in operator types."""
    if isinstance(op, LtiStateSpace):
        d = {"kind": "lti", "A": op.A, "B": op.B, "C": op.C, "D": op.D, "sampling": op.sampling}
        if np.any(op.x0 != 0):
            d["x0"] = op.x0
        return d
    if isinstance(op, StaticMap):
        if op.name not in ("saturation", "cubic", "deadzone", "relu"):
            raise FormatError(f"static map {op.name!r} is not registered")
        return {"kind": "static", "name": op.name, "params": dict(op.params), "dim": op.input_dim}
    if isinstance(op, ScalarGain):
        return {"kind": "gain", "k": op.k, "dim": op.input_dim}
    if isinstance(op, Sum):
        return {"kind": "sum", "left": operator_to_dict(op.left), "right": operator_to_dict(op.right)}
    if isinstance(op, Cascade):
        return {"kind": "cascade", "first": operator_to_dict(op.first),
                "second": operator_to_dict(op.second)}
    if isinstance(op, NegFeedbackWithGain):
        return {"kind": "negfb", "inner": operator_to_dict(op.inner), "eps": op.eps}
    raise FormatError(f"no file form for {type(op).__name__}")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def read_operator(path) -> SystemOperator:
    return operator_from_dict(_load_json(path))


def write_operator(path, op: SystemOperator) -> Path:
    return write_json(path, operator_to_dict(op))


# --------------------------------------------------------------------------
# loops


def _solver_from_dict(d) -> SolverOptions:
    d = dict(d or {})
    unknown = set(d) - {"residual_tol", "max_iter", "damping"}
    if unknown:
        raise FormatError(f"unknown solver fields {sorted(unknown)}")
    try:
        return SolverOptions(**d)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad solver block: {exc}") from exc


def loop_from_dict(d: dict):
    from .interconnect import FeedbackLoop

    if not isinstance(d, dict) or "sigma1" not in d or "sigma2" not in d:
        raise FormatError("loop files need 'sigma1' and 'sigma2'")
    solver = _solver_from_dict(d.get("solver"))
    return FeedbackLoop(operator_from_dict(d["sigma1"], solver), operator_from_dict(d["sigma2"], solver),
                        solver)


def loop_to_dict(loop) -> dict:
    s = loop.solver
    return {"sigma1": operator_to_dict(loop.sigma1), "sigma2": operator_to_dict(loop.sigma2),
            "solver": {"residual_tol": s.residual_tol, "max_iter": s.max_iter, "damping": s.damping}}


def read_loop(path):
    return loop_from_dict(_load_json(path))


def write_loop(path, loop) -> Path:
    return write_json(path, loop_to_dict(loop))


def relpath(path, start) -> str:
    return os.path.relpath(Path(path), Path(start)).replace(os.sep, "/")
