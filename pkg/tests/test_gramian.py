import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from ltvcert import ode
from ltvcert.gramian import (AsymmetricMatrixError, GramianResult, QuadratureError,
                             controllability_gramian, eig_bounds, gramian, gramian_table,
                             gramian_windows, k_matrix, n_matrix, observability_gramian)
from ltvcert.scenarios import random_system
from ltvcert.system import ConfigError, DomainError, load_system

EX2 = load_system({"A": [["-1/t"]], "C": [["1"]],
                   "domain": {"min": 1, "max": "inf", "excluded": [0]}})
CONST = load_system({"A": [["0", "1"], ["-2", "-0.3"]], "B": [["0"], ["1"]], "C": [["1", "0"]]})


@pytest.mark.parametrize("t", [1, 2, 5, 10, 50])
def test_example2_closed_forms(t):
    assert observability_gramian(EX2, t, t + 1).matrix[0, 0] == pytest.approx(t / (t + 1), rel=1e-10)
    assert n_matrix(EX2, t, 1.0).matrix[0, 0] == pytest.approx((t + 1) / t, rel=1e-10)


def _phi_const(t, s):
    return expm(CONST.A.evaluate(0.0) * (t - s))


@given(st.floats(-3, 3), st.floats(0.2, 3))
@settings(max_examples=20)
def test_constant_system_against_quad_vec(t, sigma):
    B = CONST.B.evaluate(0.0)
    C = CONST.C.evaluate(0.0)
    a, b = t, t + sigma
    W = quad_vec(lambda s: _phi_const(a, s) @ B @ B.T @ _phi_const(a, s).T, a, b, epsrel=1e-12)[0]
    M = quad_vec(lambda s: _phi_const(s, a).T @ C.T @ C @ _phi_const(s, a), a, b, epsrel=1e-12)[0]
    assert np.allclose(controllability_gramian(CONST, a, b).matrix, W, rtol=1e-7, atol=1e-12)
    assert np.allclose(observability_gramian(CONST, a, b).matrix, M, rtol=1e-7, atol=1e-12)
    P = _phi_const(b, a)
    assert np.allclose(k_matrix(CONST, t, sigma).matrix, P @ W @ P.T, rtol=1e-7, atol=1e-12)
    Q = _phi_const(a, b)
    assert np.allclose(n_matrix(CONST, t, sigma).matrix, Q.T @ M @ Q, rtol=1e-7, atol=1e-12)


@pytest.mark.parametrize("kind", ["K", "N"])
def test_congruence_agrees_with_definition(kind):
    sys3 = random_system(3, "mixed", seed=2)
    t0 = np.array([-1.0, 0.0, 1.5])
    a, _ = gramian_windows(sys3, kind, t0, t0 + 1.0, method="congruence")
    b, _ = gramian_windows(sys3, kind, t0, t0 + 1.0, method="definition")
    assert np.allclose(a, b, rtol=1e-7, atol=1e-10)


def test_result_fields_and_symmetry():
    r = gramian(CONST, "W", 0.0, 2.0)
    assert isinstance(r, GramianResult)
    assert np.array_equal(r.matrix, r.matrix.T)
    lo, hi = eig_bounds(r.matrix)
    assert (r.lambda_min, r.lambda_max) == (lo, hi)
    assert r.psd and r.quad_error >= 0
    assert set(r.to_dict()) == {"kind", "window", "matrix", "lambda_min", "lambda_max", "quad_error"}


def test_table_matches_single_windows():
    tab = gramian_table(EX2, "M", [1.0, 3.0], [0.5, 2.0])
    assert tab.matrices.shape == (2, 2, 1, 1)
    for i, t in enumerate([1.0, 3.0]):
        for j, s in enumerate([0.5, 2.0]):
            assert tab.result(i, j).matrix[0, 0] == pytest.approx(t * s / (t + s), rel=1e-9)


def test_zero_input_gives_zero_matrix():
    s = load_system({"A": [["t"]], "B": [["0"]]})
    assert gramian(s, "W", 0.0, 1.0).matrix[0, 0] == 0.0


def test_errors():
    with pytest.raises(ConfigError, match="no B"):
        gramian(EX2, "W", 1.0, 1.0)
    with pytest.raises(ValueError):
        gramian(EX2, "M", 1.0, 0.0)
    with pytest.raises(ValueError):
        gramian(EX2, "Q", 1.0, 1.0)
    with pytest.raises(DomainError):
        observability_gramian(EX2, 0.5, 2.0)
    with pytest.raises(QuadratureError):
        gramian_windows(load_system({"A": [["0"]], "C": [["sin(200*t)"]]}), "M", [0.0], [50.0],
                        max_panels=2)
    assert issubclass(AsymmetricMatrixError, ValueError)


def test_overflow_policy():
    grow = load_system({"A": [["t^2"]], "C": [["1"]]})
    # |Phi| reaches e^450 on [14, 16]; its square overflows
    G, err = gramian_windows(grow, "N", [14.0], [16.0], on_overflow="inf", rtol=1e-6)
    assert np.isinf(G).all() and np.isinf(err).all()
    with pytest.raises(ode.Divergence):
        gramian_windows(grow, "M", [14.0], [16.0], rtol=1e-6)


def test_example3_observability_closed_form():
    ex3 = load_system({"A": [["t"]], "C": [["-sqrt(2*(t-1))*exp(-t+0.5)"]], "domain": {"min": 1}})
    for t in (1.0, 2.0, 5.0):
        exact = math.exp((t + 1 - 1) ** 2 - t ** 2) - math.exp(-2 * t + 1)
        assert observability_gramian(ex3, t, t + 1).matrix[0, 0] == pytest.approx(exact, rel=1e-8)
