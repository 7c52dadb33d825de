import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_are

from ltvcert.envelope import GrowthEnvelope, NuesEnvelope
from ltvcert.riccati import (ObserverGain, PreconditionError, RiccatiBlowUp, closed_loop_system,
                             default_L_param, discard_length, error_system, feedback_gain,
                             phi_integral_bounds, riccati_residual, shifted_system,
                             simulate_observer, solve_riccati, synthesize_observer,
                             theta_constants, verify_closed_loop_bound, verify_proposition_17,
                             zeta_bounds)
from ltvcert.scenarios import COUNTER_GAIN, SCENARIOS
from ltvcert.system import MatrixFunction, load_system

SCALAR = load_system({"A": [["0"]], "B": [["1"]]})
OSC2 = load_system({"A": [["0", "1"], ["-1", "-0.2"]], "B": [["0"], ["1"]]})


@pytest.mark.parametrize("L", [0.0, 1.0, 2.0])
def test_scalar_fixed_point(L):
    sol = solve_riccati(SCALAR, L, (0.0, 15.0))
    assert sol.S[0, 0, 0] == pytest.approx(L + math.sqrt(L * L + 1), abs=1e-8)
    assert sol.residual <= 1e-6
    assert not sol.truncated and sol.valid_window == (0.0, 15.0)


def test_constant_plant_matches_care():
    L = 0.5
    sol = solve_riccati(OSC2, L, (0.0, 20.0))
    A = OSC2.A.evaluate(0.0) + L * np.eye(2)
    X = solve_continuous_are(A, OSC2.B.evaluate(0.0), np.eye(2), np.eye(1))
    assert np.allclose(sol.S[0], X, rtol=1e-7)


def test_time_varying_against_scipy():
    sys1 = load_system({"A": [["-t*sin(t)"]], "B": [["1+0.5*cos(t)"]]})
    L, T1 = 1.0, 3.0
    ts = np.linspace(0.0, T1, 7)
    sol = solve_riccati(sys1, L, (0.0, T1), terminal=np.array([[0.7]]), grid=ts)

    def rhs(t, y):
        a = -t * math.sin(t) + L
        b = 1 + 0.5 * math.cos(t)
        return [-2 * a * y[0] + (b * y[0]) ** 2 - 1]

    ref = solve_ivp(rhs, (T1, 0.0), [0.7], method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    assert np.allclose(sol.at(ts)[:, 0, 0], ref.sol(ts)[0], rtol=1e-7)


def test_symmetry_and_residual():
    sys3 = load_system({"A": [["0", "1", "0"], ["0", "0", "1"], ["-1", "sin(t)", "-1"]],
                        "B": [["0"], ["0"], ["1"]]})
    sol = solve_riccati(sys3, 1.0, (0.0, 4.0))
    assert np.max(np.abs(sol.S - np.swapaxes(sol.S, 1, 2))) <= 1e-10
    assert riccati_residual(sys3, 1.0, sol.grid, sol.S) <= 1e-6


def test_blow_up_time():
    # S' = S^2 - 1 backward from S(5) = -2 reaches -inf at t = 5 - atanh(1/2)
    with pytest.raises(RiccatiBlowUp) as info:
        solve_riccati(SCALAR, 0.0, (0.0, 5.0), terminal=np.array([[-2.0]]))
    assert info.value.time == pytest.approx(5.0 - math.atanh(0.5), abs=1e-6)


def test_no_input_is_linear_lyapunov():
    s = load_system({"A": [["-1"]], "B": [["0"]]})
    sol = solve_riccati(s, 0.0, (0.0, 10.0))
    # S' = 2 S - 1 backward from the default S(10) = 1: S(t) = (1 + e^{2(t - 10)}) / 2
    ts = np.array([0.0, 5.0, 9.0])
    assert np.allclose(sol.at(ts)[:, 0, 0], (1 + np.exp(2 * (ts - 10))) / 2, rtol=1e-8)


def test_discard_extends_terminal_time():
    sol = solve_riccati(SCALAR, 1.0, (0.0, 2.0), discard=True)
    assert sol.terminal_time == pytest.approx(2.0 + discard_length(1.0))
    # what is left of the transient is about e^{-2 sqrt(2) 5}
    assert sol.S[-1, 0, 0] == pytest.approx(1 + math.sqrt(2), abs=1e-5)
    assert 1.0 <= discard_length(0.01) <= 10.0


def test_theta_constants_and_default():
    th1, th2 = theta_constants(0.1, 0.2, 0.3)
    assert th1 == pytest.approx(0.2 + 4 * 0.3)
    assert th2 == pytest.approx(0.3 + 2 * (0.2 + 0.1))
    assert default_L_param(th1) == pytest.approx(2 * th1 + 1)


def test_feedback_and_riccati_sandwich():
    L = 1.0
    sol = solve_riccati(OSC2, L, (0.0, 10.0), discard=True)
    gain = feedback_gain(sol, OSC2)
    assert gain.F.shape == (sol.grid.size, 1, 2)
    V = shifted_system(closed_loop_system(OSC2, gain), L / 2)
    rep = verify_proposition_17(V, sol.grid, sol.S, L, tol=1e-3)
    assert rep.passed and rep.C1 > 0 and rep.C2 >= rep.C1


def test_closed_loop_bound():
    sol = solve_riccati(OSC2, 3.0, (0.0, 10.0), discard=True)
    gain = feedback_gain(sol, OSC2)
    # the transient peaks near lag 0.3, so a 0.5 grid misses it and the refined check objects
    coarse = verify_closed_loop_bound(OSC2, gain, 3.0, (0.0, 0.0, 0.25),
                                      t_grid=np.linspace(0, 10, 21))
    assert not coarse.certified
    v = verify_closed_loop_bound(OSC2, gain, 3.0, (0.0, 0.0, 0.25), t_grid=np.linspace(0, 10, 81))
    assert v.certified
    with pytest.raises(PreconditionError):
        verify_closed_loop_bound(OSC2, gain, 1.0, (0.0, 0.0, 0.25))


def test_phi_integral_bounds_example4():
    ex4 = load_system({"A": [["-t*sin(t)"]]})
    growth = GrowthEnvelope(math.e ** 2, 1.0, 2.0)
    for t in (-3.0, 0.0, 2.5):
        rep = phi_integral_bounds(ex4, t, 1.0, growth)
        assert rep.passed
    z1, z2 = zeta_bounds(growth, 1.0)
    assert 0 < z1 < z2


def test_observer_gain_round_trip(tmp_path):
    g = ObserverGain(np.array([0.0, 1.0, 2.0]), np.arange(6.0).reshape(3, 2, 1))
    back = ObserverGain.from_dict(json.loads(json.dumps(g.to_dict())))
    assert np.array_equal(back.L, g.L) and np.array_equal(back.grid, g.grid)
    assert np.allclose(g.at(0.5)[0], [[1.0], [2.0]])
    exact = ObserverGain.from_function(MatrixFunction.parse(COUNTER_GAIN), [-1.0, 1.0])
    again = ObserverGain.from_dict(exact.to_dict())
    assert np.allclose(again.at(0.3), exact.at(0.3))


def test_counterexample_error_plant_and_simulation():
    plant = SCENARIOS["counterexample-detectable-not-nuco"].system()
    gain = ObserverGain.from_function(MatrixFunction.parse(COUNTER_GAIN), [0.0, 3.0])
    err = error_system(plant, gain)
    assert np.allclose(err.A.evaluate(2.0), -4.0 * np.eye(2))
    env = NuesEnvelope(math.e ** 3, 1 / 3, 1 / 3)
    tr = simulate_observer(plant, gain, [1.0, 1.0], [0.0, 0.0], (0.0, 3.0), envelope=env)
    assert tr.error_norm[-1] == pytest.approx(math.sqrt(2) * math.exp(-9), rel=1e-6)
    assert tr.within_envelope() and tr.crosscheck < 1e-9


def test_simulation_identical_initial_states(tmp_path):
    plant = SCENARIOS["counterexample-detectable-not-nuco"].system()
    gain = ObserverGain.from_function(MatrixFunction.parse(COUNTER_GAIN), [0.0, 2.0])
    tr = simulate_observer(plant, gain, [1.0, -1.0], [1.0, -1.0], (0.0, 2.0))
    assert np.max(tr.error_norm) <= 1e-12
    path = tmp_path / "traj.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,error_norm,envelope,state_0,state_1"
    assert len(lines) == tr.t.size + 1


def test_simulation_rejects_horizon_outside_gain():
    plant = SCENARIOS["counterexample-detectable-not-nuco"].system()
    gain = ObserverGain.from_function(MatrixFunction.parse(COUNTER_GAIN), [0.0, 2.0])
    with pytest.raises(ValueError):
        simulate_observer(plant, gain, [1, 1], [0, 0], (0.0, 3.0))


def test_synthesis_small_window():
    ex2 = SCENARIOS["example2-uco"].system()
    syn = synthesize_observer(ex2, (1.0, 10.0))
    assert syn.L_param > 2 * syn.rates["theta1"]
    assert syn.error_certificate.certified
    assert syn.consistency < 1e-5
    tr = simulate_observer(ex2, syn.gain, [1.0], [0.0], (1.0, 10.0),
                           envelope=syn.error_certificate.params)
    assert tr.within_envelope()


def test_synthesis_rejects_small_L():
    ex2 = SCENARIOS["example2-uco"].system()
    with pytest.raises(PreconditionError):
        synthesize_observer(ex2, (1.0, 10.0), L_param=0.0)
