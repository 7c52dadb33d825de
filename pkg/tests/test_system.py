import json
import math

import numpy as np
import pytest

from ltvcert.system import (ConfigError, DimensionError, DomainError, LtvSystem, MatrixFunction,
                            SampledMatrixFunction, TimeDomain, load_system)

EX2 = {"name": "ex2", "A": [["-1/t"]], "C": [["1"]],
       "domain": {"min": 1, "max": "inf", "excluded": [0]}}


def test_load_from_dict_string_and_file(tmp_path):
    path = tmp_path / "ex2.json"
    path.write_text(json.dumps(EX2))
    for src in (EX2, json.dumps(EX2), str(path)):
        s = load_system(src)
        assert s.n == 1
        assert s.A.evaluate(2.0)[0, 0] == -0.5
        assert s.domain.lower == 1 and math.isinf(s.domain.upper)


def test_config_round_trip():
    s = load_system({**EX2, "B": [["t", "1"]]})
    again = load_system(s.to_config())
    ts = np.linspace(1, 9, 5)
    for key in ("A", "B", "C"):
        assert np.array_equal(getattr(s, key).evaluate_many(ts), getattr(again, key).evaluate_many(ts))
    assert again.domain == s.domain


@pytest.mark.parametrize("cfg, err, words", [
    ({"C": [["1"]]}, ConfigError, "'A'"),
    ({"A": [["1", "2"]]}, DimensionError, "square"),
    ({"A": [["1"]], "B": [["1"], ["2"]]}, DimensionError, "B"),
    ({"A": [["1", "0"], ["0", "1"]], "C": [["1"]]}, DimensionError, "C"),
    ({"A": [["1"]], "D": [["1"]]}, DimensionError, "D"),
    ({"A": [["1"]], "n": 2}, DimensionError, "n=2"),
    ({"A": [["t +"]]}, ConfigError, "field A"),
    ({"A": [["1"]], "bogus": 1}, ConfigError, "bogus"),
    ({"A": [["1"]], "domain": {"min": "minus infinity"}}, ConfigError, "domain"),
])
def test_config_errors(cfg, err, words):
    with pytest.raises(err) as info:
        load_system(cfg)
    assert words in str(info.value)


def test_invalid_json_is_config_error():
    with pytest.raises(ConfigError):
        load_system("{not json")


def test_domain_membership_and_spans():
    d = TimeDomain(-5.0, 5.0, (0.0,))
    assert d.contains(np.array([-5, -1, 1, 5])).all()
    assert not d.contains(0.0)
    assert not d.contains(6.0)
    d.check_span(0.5, 4.0)
    with pytest.raises(DomainError):
        d.check_span(-1.0, 1.0)
    with pytest.raises(DomainError):
        d.check(7.0)
    r = d.reflected()
    assert (r.lower, r.upper, r.excluded) == (-5.0, 5.0, (0.0,))
    with pytest.raises(DomainError):
        TimeDomain(1.0, 1.0)


def test_require_names_missing_matrix():
    s = load_system(EX2)
    with pytest.raises(ConfigError, match="no B matrix"):
        s.require("B")


def test_matrix_transforms():
    f = MatrixFunction.parse([["t", "1"], ["t^2", "exp(t)"]])
    t = 0.7
    assert np.allclose(f.transpose().evaluate(t), f.evaluate(t).T)
    assert np.allclose(f.negated().evaluate(t), -f.evaluate(t))
    assert np.allclose(f.reflected().evaluate(t), f.evaluate(-t))
    assert np.allclose(f.shifted(2.0).evaluate(t), f.evaluate(t) + 2.0 * np.eye(2))
    assert MatrixFunction.zeros(2, 3).is_zero()


def test_sampled_matrix_function_matches_expression():
    f = MatrixFunction.parse([["sin(t)"]])
    g = SampledMatrixFunction(lambda t: np.array([[math.sin(t)]]), (1, 1))
    ts = np.linspace(-2, 2, 7)
    assert np.allclose(g.evaluate_many(ts), f.evaluate_many(ts))
    assert np.allclose(g.reflected().evaluate(0.3), f.reflected().evaluate(0.3))


def test_with_plant_keeps_io_matrices():
    s = load_system({**EX2, "B": [["1"]]})
    v = s.with_plant(MatrixFunction.parse([["-2"]]))
    assert v.B is s.B and v.C is s.C and v.A.evaluate(3.0)[0, 0] == -2.0
    assert isinstance(v, LtvSystem)
