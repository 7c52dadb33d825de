import math

import numpy as np
import pytest

from ltvcert.envelope import (CERTIFIED, INCONCLUSIVE, REFUTED, GrowthEnvelope, NuesEnvelope,
                              certify_gramian_envelope, certify_kalman, certify_nues,
                              check_stability_equivalence, continuum_inflation, default_t_grid,
                              extend_to_continuum, fit_growth_envelope, refine_grid,
                              sample_log_norms, verify_triad)
from ltvcert.propagator import transitions
from ltvcert.scenarios import random_system
from ltvcert.system import TimeDomain, load_system

GRID = np.linspace(-10, 10, 41)
EX4 = load_system({"A": [["-t*sin(t)"]], "C": [["1"]]})
# Phi(t, s) = exp(-(t - s) + 0.3 (g(t) - g(s))), g = sin - t cos: NUES with beta 0.7, delta 0.6
OSC = load_system({"A": [["-1+0.3*t*sin(t)"]]})


def _osc_log_phi(t, s):
    g = lambda x: np.sin(x) - x * np.cos(x)  # noqa: E731
    return -(t - s) + 0.3 * (g(t) - g(s))


def test_grids():
    g = default_t_grid(TimeDomain(1.0, math.inf), points=11)
    assert g[0] == 1.0 and g.size == 11
    r = refine_grid([0.0, 1.0, 3.0])
    assert np.allclose(r, [0.0, 0.5, 1.0, 2.0, 3.0])


def test_log_norm_samples_match_closed_form():
    s = sample_log_norms(OSC, GRID, 4.0, direction="forward", refine=False)
    assert len(s) > 0
    assert np.allclose(s.log_norm, _osc_log_phi(s.t, s.tau), atol=1e-7)
    assert np.all(np.abs(s.t - s.tau) <= 4.0 + 1e-12)


def test_growth_envelope_example4():
    # each trend window must hold a few periods of the oscillation
    v = fit_growth_envelope(EX4, np.linspace(-20, 20, 81))
    assert v.status == CERTIFIED
    env = v.params
    assert isinstance(env, GrowthEnvelope) and env.K0 >= 1.0
    # the closed form obeys e^2 e^{|t-s|} e^{2|s|}; the fitted eta sits below 2
    assert env.eta <= 2.0
    assert v.margins["min"] >= -1e-12


def test_uniform_growth_of_rotation():
    rot = load_system({"A": [["0", "1"], ["-1", "0"]]})
    v = fit_growth_envelope(rot, GRID, uniform=True)
    assert v.certified and v.params.eta == 0.0 and v.params.K0 == pytest.approx(1.0, abs=1e-6)


def test_growth_refuted_for_cubic_exponent():
    ce = load_system({"A": [["-t^2", "0"], ["0", "t^2"]]})
    v = fit_growth_envelope(ce, GRID, max_lag=2.0)
    assert v.status == REFUTED and len(v.witness) >= 1
    k = certify_kalman(ce, GRID, max_lag=2.0)
    assert k.status == REFUTED


def test_kalman_certified_with_alpha_table():
    v = certify_kalman(EX4, GRID)
    assert v.certified
    lags = [row[0] for row in v.params["alpha"]]
    assert lags == sorted(lags) and lags[0] == 0.0
    assert all(row[1] >= 1.0 - 1e-12 for row in v.params["alpha"])


def test_nues_fit_recovers_rates():
    v = certify_nues(OSC, GRID)
    assert v.certified
    env = v.params
    assert env.beta == pytest.approx(0.7, abs=0.05)
    assert env.delta == pytest.approx(0.6, abs=0.05)


def test_nues_grid_envelope_widened_holds_off_grid():
    v = certify_nues(OSC, GRID)
    wide = extend_to_continuum(OSC, GRID, v.params)
    assert wide.M >= v.params.M
    rng = np.random.default_rng(1)
    pairs = np.sort(rng.uniform(-10, 10, size=(400, 2)), axis=1)[:, ::-1]
    pairs = pairs[pairs[:, 0] - pairs[:, 1] <= 8.0]
    exact = _osc_log_phi(pairs[:, 0], pairs[:, 1])
    assert np.all(exact <= wide.log_bound(pairs[:, 0], pairs[:, 1]))
    assert continuum_inflation(OSC, GRID, v.params) > 0


def test_nues_refuted_for_growth_and_target_checks():
    grow = load_system({"A": [["0.5"]]})
    assert certify_nues(grow, GRID).status == REFUTED
    closed = load_system({"A": [["-t^2", "0"], ["0", "-t^2"]]})
    good = NuesEnvelope(math.e ** 3, 1 / 3, 1 / 3)
    assert certify_nues(closed, GRID, target=good, max_lag=None, refine=False).certified
    bad = NuesEnvelope(1.0, 5.0, 0.0)
    assert certify_nues(closed, GRID, target=bad, max_lag=None, refine=False).status == REFUTED


def test_backward_direction():
    # the adjoint of a forward-stable plant decays backward in time
    adj = load_system({"A": [["1"]]})
    v = certify_nues(adj, GRID, "backward")
    assert v.certified and v.params.direction == "backward"
    assert v.params.beta == pytest.approx(1.0, abs=0.02)


def test_envelope_validation():
    with pytest.raises(ValueError):
        NuesEnvelope(1.0, -1.0, 0.0)
    with pytest.raises(ValueError):
        NuesEnvelope(1.0, 1.0, 0.0, "sideways")


def test_gramian_envelope_example2_uniform():
    ex2 = load_system({"A": [["-1/t"]], "C": [["1"]],
                       "domain": {"min": 1, "max": "inf", "excluded": [0]}})
    g = np.linspace(1, 50, 81)
    v = certify_gramian_envelope(ex2, "M", g, [1.0], uniform=True)
    assert v.certified
    lo, hi = v.params.gauge0[0], v.params.gauge1[0]
    # M(t, t+1) = t/(t+1) fills [1/2, 50/51]
    assert 0.5 - 1e-9 <= lo <= 0.5 + 1e-6 and 50 / 51 - 1e-9 <= hi < 1


def test_gramian_envelope_example3_refuted():
    ex3 = load_system({"A": [["t"]], "C": [["-sqrt(2*(t-1))*exp(-t+0.5)"]],
                       "domain": {"min": 1}})
    v = certify_gramian_envelope(ex3, "M", np.linspace(1, 20, 41), [0.5, 1.0, 2.0, 4.0])
    assert v.status == REFUTED


def test_example4_nuco_and_triad():
    g = np.linspace(-20, 20, 81)
    m = certify_gramian_envelope(EX4, "M", g)
    assert m.certified and m.params.nu1 <= 2.1
    t = verify_triad(EX4, ["M", "N"], g)
    assert t.certified and t.property == "triad:growth"
    assert t.details["within_bound"]


def test_triad_rejects_mixed_pair():
    with pytest.raises(ValueError):
        verify_triad(EX4, ["M", "W"])


def test_triad_inconclusive_without_inputs():
    v = verify_triad(EX4, ["M", "N"], GRID, [0.5, 1.0, 2.0])
    assert v.status == INCONCLUSIVE


def test_stability_equivalence_sound_mapping():
    plant = random_system(2, "trig", "decaying", seed=3)
    rep = check_stability_equivalence(plant, GRID)
    assert rep.forward.certified
    assert rep.adjoint_sound.certified and rep.dual_sound.certified


def test_transition_oracle_for_samples():
    s = sample_log_norms(EX4, np.linspace(-3, 3, 7), None, refine=False)
    pairs = np.column_stack([s.t, s.tau])
    direct = np.log(np.abs(transitions(EX4, pairs)[:, 0, 0]))
    assert np.allclose(s.log_norm, direct, atol=1e-8)
