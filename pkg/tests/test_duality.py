import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvcert.duality import (DualityReport, adjoint_of_dual, adjoint_system, check_psi_relations,
                             dual_system, plant_adjoint, plant_dual, verify_gramian_identities,
                             verify_gramian_identities_grid)
from ltvcert.gramian import controllability_gramian, observability_gramian
from ltvcert.scenarios import random_system
from ltvcert.system import ConfigError, DomainError, load_system

EX2 = load_system({"name": "ex2", "A": [["-1/t"]], "C": [["1"]],
                   "domain": {"min": 1, "max": "inf", "excluded": [0]}})


def test_example2_six_matrices():
    rep = verify_gramian_identities(EX2, 1.0, 1.0)
    assert isinstance(rep, DualityReport) and rep.passed
    for name, value in (("M", 0.5), ("W_a", 0.5), ("K_d", 0.5), ("N", 2.0), ("K_a", 2.0),
                        ("W_d", 2.0)):
        assert rep.matrices[name][0, 0] == pytest.approx(value, rel=1e-9)
    assert rep.max_deviation < 1e-9
    assert rep.deviation("W_a", "M") == rep.deviation("M", "W_a")


def test_constructions():
    s = load_system({"A": [["t", "1"], ["0", "-t"]], "B": [["1"], ["t"]], "C": [["1", "t^2"]]})
    t = 0.8
    A, B, C = (m.evaluate(t) for m in (s.A, s.B, s.C))
    a = adjoint_system(s)
    assert np.allclose(a.A.evaluate(t), -A.T) and np.allclose(a.B.evaluate(t), -C.T)
    assert np.allclose(a.C.evaluate(t), -B.T)
    d = dual_system(s)
    assert np.allclose(d.A.evaluate(-t), A.T) and np.allclose(d.B.evaluate(-t), C.T)
    assert np.allclose(d.C.evaluate(-t), B.T)
    assert np.allclose(plant_adjoint(s).A.evaluate(t), -A.T)
    assert np.allclose(plant_dual(s).A.evaluate(-t), A.T)
    assert adjoint_of_dual(s).n == 2
    assert adjoint_system(adjoint_system(s)).name == s.name


def test_dual_domain_is_reflected():
    d = dual_system(EX2)
    assert (d.domain.lower, d.domain.upper) == (-np.inf, -1.0)


def test_requires_output_matrix():
    with pytest.raises(ConfigError):
        dual_system(load_system({"A": [["1"]]}))


def test_window_outside_domain():
    with pytest.raises(DomainError):
        verify_gramian_identities(EX2, 0.5, 1.0)


@settings(max_examples=8)
@given(st.integers(0, 10_000), st.sampled_from(["polynomial", "trig", "mixed"]))
def test_identities_on_random_systems(seed, family):
    s = random_system(2, family, seed=seed)
    reps = verify_gramian_identities_grid(s, [-1.0, 0.5], [0.5, 2.0])
    assert all(r.passed for r in reps), max(r.max_deviation for r in reps)


def test_observability_equals_adjoint_controllability_independently():
    # W of the adjoint computed through a separately built system
    s = random_system(3, "trig", seed=5)
    M = observability_gramian(s, -0.5, 1.0).matrix
    W = controllability_gramian(adjoint_system(s), -0.5, 1.0).matrix
    assert np.allclose(M, W, rtol=1e-7, atol=1e-12)


def test_psi_relations():
    s = random_system(3, "mixed", seed=9)
    pairs = [(1.0, -1.0), (-0.5, 2.0), (0.3, 0.3)]
    chk = check_psi_relations(s, pairs)
    assert chk.passed and chk.pairs == 3
