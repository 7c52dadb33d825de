import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from ltvcert import ode


def test_batch_both_directions():
    r = ode.integrate(lambda t, y: -y, [0.0, 0.0], np.array([[1.0], [2.0]]),
                      [[1.0, 2.0], [-1.0, -2.0]])
    assert np.allclose(r.values[0, :, 0], np.exp([-1.0, -2.0]), rtol=1e-9)
    assert np.allclose(r.values[1, :, 0], 2 * np.exp([1.0, 2.0]), rtol=1e-9)
    assert not r.diverged.any()


def test_divergence_reports_time_reached():
    r = ode.integrate(lambda t, y: y, [0.0], np.array([[1.0]]), [[10.0, 800.0]], rtol=1e-5)
    assert r.diverged[0]
    assert r.values[0, 0, 0] == pytest.approx(np.exp(10.0), rel=1e-4)
    assert np.isinf(r.values[0, 1, 0])
    # e^t passes 1e300 near t = 690.8
    assert 690.0 < r.time_reached[0] < 700.0


def test_finite_time_blow_up_is_step_underflow():
    with pytest.raises(ode.StepSizeUnderflow) as info:
        ode.integrate(lambda t, y: y ** 2, [0.0], np.array([[1.0]]), [[2.0]])
    assert info.value.time_reached == pytest.approx(1.0, abs=1e-6)


def test_step_budget():
    with pytest.raises(ode.PropagationError):
        ode.integrate(lambda t, y: np.cos(50 * t)[:, None] * np.ones_like(y), [0.0],
                      np.array([[0.0]]), [[100.0]], max_steps=50)


def test_post_step_is_applied():
    seen = []

    def post(y):
        seen.append(y.shape)
        return y

    ode.integrate(lambda t, y: -y, [0.0], np.array([[[1.0, 0.0], [0.0, 1.0]]]), [[1.0]],
                  post_step=post)
    assert seen and seen[0][1:] == (2, 2)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3.0))
def test_matches_scipy_on_scalar_ltv(a, b, span):
    # y' = (a + b sin t) y, reference from scipy's DOP853
    f = lambda t, y: (a + b * np.sin(t))[:, None] * y  # noqa: E731
    r = ode.integrate(f, [0.0], np.array([[1.0]]), [[span]], rtol=1e-11, atol=1e-14)
    ref = solve_ivp(lambda t, y: (a + b * np.sin(t)) * y, (0, span), [1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14).y[0, -1]
    exact = np.exp(a * span + b * (1 - np.cos(span)))
    assert r.values[0, 0, 0] == pytest.approx(exact, rel=1e-9)
    assert ref == pytest.approx(exact, rel=1e-9)
