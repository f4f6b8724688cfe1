import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from passivity_lab.formats import (
    FormatError,
    config_hash,
    dumps,
    loop_from_dict,
    operator_from_dict,
    operator_to_dict,
    read_loop,
    read_operator,
    read_signal,
    sidecar_path,
    write_loop,
    write_operator,
    write_signal,
)
from passivity_lab.interconnect import FeedbackLoop
from passivity_lab.signals import SampledSignal
from passivity_lab.systems import (
    Cascade,
    LtiStateSpace,
    NegFeedbackWithGain,
    ScalarGain,
    SolverOptions,
    StaticMap,
    Sum,
    static_map,
)


def rand_signal(seed, channels=2, N=50, dt=0.01):
    return SampledSignal(np.random.default_rng(seed).standard_normal((channels, N)), dt)


# -------------------------------------------------------------- JSON


def test_dumps_sorts_keys_and_is_stable():
    a = dumps({"b": 1, "a": [1.0, 2.5], "c": {"z": None, "y": True}})
    b = dumps({"c": {"y": True, "z": None}, "a": [1.0, 2.5], "b": 1})
    assert a == b
    assert a.index('"a"') < a.index('"b"') < a.index('"c"')
    assert json.loads(a) == {"a": [1.0, 2.5], "b": 1, "c": {"y": True, "z": None}}


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_round_trip_exactly(x):
    assert json.loads(dumps({"x": x}))["x"] == x


def test_float_tokens():
    text = dumps([0.1, 1.0, 1e300, math.inf, -math.inf, math.nan])
    assert "0.10000000000000001" in text
    assert "1.0" in text
    assert json.loads(text) == [0.1, 1.0, 1e300, "inf", "-inf", "nan"]


def test_numpy_values_serialized():
    text = dumps({"a": np.arange(3), "b": np.float64(0.5), "c": np.array([1 + 2j]), "d": np.bool_(True)})
    assert json.loads(text) == {"a": [0, 1, 2], "b": 0.5, "c": [[1.0, 2.0]], "d": True}
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [0.5]}) == config_hash({"b": [0.5], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64


# -------------------------------------------------------------- signals


def test_signal_round_trip(tmp_path):
    s = rand_signal(0)
    p = write_signal(tmp_path / "u.csv", s)
    assert sidecar_path(p).exists()
    back = read_signal(p)
    assert back.dt == s.dt
    np.testing.assert_array_equal(back.values, s.values)
    assert p.read_text().splitlines()[0] == "t,ch0,ch1"


def test_signal_without_sidecar_infers_dt(tmp_path):
    p = write_signal(tmp_path / "u.csv", rand_signal(1, channels=1, dt=0.05))
    sidecar_path(p).unlink()
    assert read_signal(p).dt == pytest.approx(0.05, rel=1e-12)


def test_non_uniform_grid_rejected(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("t,ch0\n0,1\n0.1,2\n0.25,3\n")
    with pytest.raises(FormatError, match="non-uniform"):
        read_signal(p)


def test_grid_must_start_at_zero(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("t,ch0\n0.1,1\n0.2,2\n0.3,3\n")
    with pytest.raises(FormatError):
        read_signal(p)


@pytest.mark.parametrize("text", ["", "time,ch0\n0,1\n0.1,2\n", "t,ch1\n0,1\n0.1,2\n",
                                  "t,ch0\n0,1\n", "t,ch0\n0,x\n0.1,2\n", "t,ch0\n0,1,2\n0.1,2,3\n"])
def test_malformed_signal_files(tmp_path, text):
    p = tmp_path / "u.csv"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_signal(p)


def test_sidecar_must_agree(tmp_path):
    p = write_signal(tmp_path / "u.csv", rand_signal(2))
    sidecar_path(p).write_text(json.dumps({"dt": 0.01, "channels": 3, "samples": 50}))
    with pytest.raises(FormatError):
        read_signal(p)
    sidecar_path(p).write_text(json.dumps({"dt": 0.02, "channels": 2, "samples": 50}))
    with pytest.raises(FormatError):
        read_signal(p)


def test_missing_signal_file(tmp_path):
    with pytest.raises(FormatError):
        read_signal(tmp_path / "nope.csv")


# -------------------------------------------------------------- operators


def tf(num, den, **kw):
    return LtiStateSpace.from_tf(num, den, **kw)


OPERATORS = [
    tf([1.0, 2.0], [1.0, 3.0, 2.0]),
    tf([2.0], [1.0], sampling="point"),
    LtiStateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], x0=[0.5]),
    static_map("cubic", a=2.0, b=0.25),
    ScalarGain(3.0, 2),
    Sum(ScalarGain(1.0), static_map("saturation")),
    Cascade(tf([1.0], [1.0, 1.0]), static_map("deadzone", width=0.2)),
    NegFeedbackWithGain(static_map("relu"), 0.5),
]


@pytest.mark.parametrize("op", OPERATORS, ids=lambda o: type(o).__name__)
def test_operator_round_trip(tmp_path, op):
    p = write_operator(tmp_path / "op.json", op)
    back = read_operator(p)
    assert type(back) is type(op)
    assert dumps(operator_to_dict(back)) == dumps(operator_to_dict(op))
    u = rand_signal(3, channels=op.input_dim)
    np.testing.assert_allclose(back.apply(u).values, op.apply(u).values, atol=1e-12)


def test_transfer_function_form():
    op = operator_from_dict({"kind": "lti", "num": [1.0], "den": [1.0, 1.0]})
    assert op.states == 1 and op.sampling == "average"


def test_static_lti_form():
    op = operator_from_dict({"kind": "lti", "A": [], "B": [], "C": [], "D": [[2.0]]})
    assert op.states == 0
    np.testing.assert_allclose(op.apply(rand_signal(4, channels=1)).values,
                               2.0 * rand_signal(4, channels=1).values)


@pytest.mark.parametrize("d", [{}, {"kind": "warp"}, {"kind": "gain"}, {"kind": "lti", "A": [1.0]},
                               {"kind": "static", "name": "tanh"}, "gain"])
def test_bad_operator_objects(d):
    with pytest.raises((FormatError, ValueError)):
        operator_from_dict(d)


def test_unregistered_map_has_no_file_form():
    with pytest.raises(FormatError):
        operator_to_dict(StaticMap(np.tanh, 1.0, name="tanh"))


def test_invalid_json_file(tmp_path):
    p = tmp_path / "op.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        read_operator(p)


# -------------------------------------------------------------- loops


def test_loop_round_trip(tmp_path):
    loop = FeedbackLoop(tf([1.0], [1.0, 1.0]), static_map("saturation", level=2.0),
                        SolverOptions(residual_tol=1e-11, max_iter=50, damping=0.3))
    back = read_loop(write_loop(tmp_path / "loop.json", loop))
    assert back.solver == loop.solver
    assert dumps(operator_to_dict(back.sigma2)) == dumps(operator_to_dict(loop.sigma2))


def test_loop_solver_block_validated():
    base = {"sigma1": {"kind": "gain", "k": 1.0}, "sigma2": {"kind": "gain", "k": 1.0}}
    assert loop_from_dict(base).solver == SolverOptions()
    with pytest.raises(FormatError):
        loop_from_dict({**base, "solver": {"tolerance": 1.0}})
    with pytest.raises(FormatError):
        loop_from_dict({"sigma1": base["sigma1"]})
