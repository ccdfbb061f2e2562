import json
import math

import numpy as np
import pytest

from confcover.errors import ValidationError
from confcover.io import flatten, format_value, read_config, read_csv, read_json, sanitize, to_json, write_csv, write_json


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(np.float64(np.nan)) == "nan"
    assert format_value(-math.inf) == "-inf"
    assert format_value(np.int64(7)) == "7"
    assert format_value(True) == "true"
    assert format_value(None) == ""


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.5, "c": "x,y"}, {"a": 2, "b": math.nan, "c": 'q"'}]
    p = write_csv(tmp_path / "sub" / "t.csv", rows)
    back = read_csv(p)
    assert back[0] == {"a": "1", "b": "0.5", "c": "x,y"}
    assert back[1]["c"] == 'q"' and back[1]["b"] == "nan"
    assert p.read_bytes().splitlines()[0] == b"a,b,c"
    write_csv(tmp_path / "h.csv", [], ["only"])
    assert read_csv(tmp_path / "h.csv") == []
    with pytest.raises(ValidationError):
        write_csv(tmp_path / "e.csv", [])


def test_sanitize_non_finite():
    out = sanitize({"a": math.nan, "b": {"c": math.inf, "d": [1.0, -math.inf]}, "e": np.int64(3)})
    assert out["a"] is None and out["a_status"] == "nan"
    assert out["b.c"] is None and out["b.c_status"] == "inf"
    assert out["b.d"] == [1.0, None]
    assert out["e"] == 3 and type(out["e"]) is int
    json.loads(to_json({"x": math.nan}))


def test_flatten_and_json_round_trip(tmp_path):
    obj = {"a": {"b": {"c": 1}}, "v": np.arange(3)}
    assert flatten(obj) == {"a.b.c": 1, "v": [0, 1, 2]}
    p = write_json(tmp_path / "r.json", obj)
    assert read_json(p) == {"a.b.c": 1, "v": [0, 1, 2]}


def test_read_config(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("# comment\nN = 12\nlambda-shape = ball:0.4  # trailing\n\n")
    assert read_config(p) == {"N": "12", "lambda_shape": "ball:0.4"}
    p.write_text("oops\n")
    with pytest.raises(ValidationError):
        read_config(p)
    p.write_text("= 3\n")
    with pytest.raises(ValidationError):
        read_config(p)
