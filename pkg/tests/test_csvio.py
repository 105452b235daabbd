import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardylab import csvio


def test_format_value_basics():
    assert csvio.format_value(True) == "true"
    assert csvio.format_value(False) == "false"
    assert csvio.format_value(3) == "3"
    assert csvio.format_value(None) == "nan"
    assert csvio.format_value("tag") == "tag"
    assert csvio.format_value(0.1) == "0.10000000000000001"
    assert csvio.format_value(np.float64(0.5)) == "0.5"
    assert csvio.format_value(np.int32(7)) == "7"
    assert csvio.format_value(np.bool_(True)) == "true"


@given(st.floats(allow_nan=False, allow_infinity=False))
@settings(max_examples=200)
def test_format_value_floats_round_trip(x):
    # %.17g is lossless for doubles
    assert float(csvio.format_value(x)) == x


def test_write_csv_bytes(tmp_path):
    p = tmp_path / "t.csv"
    csvio.write_csv(p, ("a", "b"), [(1, 0.5), (True, None)])
    assert p.read_text() == "a,b\n1,0.5\ntrue,nan\n"


def test_write_dat_gnuplot_header(tmp_path):
    p = tmp_path / "t.dat"
    csvio.write_dat(p, ("x", "y"), [(0.25, 2)])
    assert p.read_text() == "# x y\n0.25 2\n"


def test_sanitize_nested_and_nonfinite():
    out = csvio.sanitize({
        "a": [np.float64(1.5), math.inf, -math.inf, math.nan],
        "b": (np.int64(3), {"c": np.bool_(False)}),
        "d": np.arange(3),
    })
    assert out == {"a": [1.5, "inf", "-inf", "nan"],
                   "b": [3, {"c": False}],
                   "d": [0, 1, 2]}
    # the result must be strict-JSON serializable
    json.dumps(out, allow_nan=False)


def test_write_json_is_deterministic(tmp_path):
    p = tmp_path / "m.json"
    csvio.write_json(p, {"b": 1.0, "a": math.inf})
    text = p.read_text()
    assert text.endswith("\n")
    assert json.loads(text) == {"a": "inf", "b": 1.0}
    assert text.index('"a"') < text.index('"b"')  # keys are sorted
