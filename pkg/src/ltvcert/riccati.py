"""Riccati-based stabilising feedback and the observer built from it.

The parametrised Riccati equation

    S' = -(A + L I)^T S - S (A + L I) + S B B^T S - I

is integrated backward from a terminal value.  With ``F = B^T S`` and
``V = A + (L/2) I - B F`` it gives ``S' + V^T S + S V = -(I + L S) - S B B^T S``,
so the Lyapunov-type inequality used for the closed-loop envelope holds by
construction and can be checked numerically.

Observers are obtained through duality: the Riccati equation is solved for
the dual pair ``(A^T(-t), C^T(-t))`` on the reflected window, and the observer
gain is ``L(t) = G^T(-t)`` where ``G`` is the dual feedback gain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .duality import dual_system
from .envelope import (TREND_TOL, CertificateVerdict, GrowthEnvelope, NuesEnvelope, _groups,
                       _scan_min_rate, certify_gramian_envelope, certify_nues,
                       extend_to_continuum, fit_growth_envelope, sample_log_norms)
from .gramian import gramian_windows
from .propagator import transitions
from .system import (ConfigError, LtvSystem, MatrixFunction,
                     SampledMatrixFunction, TimeDomain, combine)

RICCATI_RTOL = 1e-10
RICCATI_ATOL = 1e-12
SYMMETRY_TOL = 1e-10
RESIDUAL_TOL = 1e-6
CROSSCHECK_TOL = 1e-6
DISCARD_MIN, DISCARD_MAX = 1.0, 10.0


class RiccatiError(RuntimeError):
    pass


class RiccatiBlowUp(RiccatiError):
    def __init__(self, time: float):
        super().__init__(f"Riccati solution blows up near t={time!r}")
        self.time = time


class PreconditionError(ValueError):
    """A hypothesis of the construction is not met (missing certificate, rate gate)."""

    def __init__(self, message: str, verdict: CertificateVerdict | None = None):
        super().__init__(message)
        self.verdict = verdict


def discard_length(L_param: float) -> float:
    """Length of the terminal transient dropped before ``S`` is used."""
    if L_param <= 0:
        return DISCARD_MAX
    return min(DISCARD_MAX, max(DISCARD_MIN, 5.0 / L_param))


def theta_constants(mu0: float, mu1: float, eta: float) -> tuple[float, float]:
    return mu1 + 4 * eta, eta + 2 * (mu1 + mu0)


def default_L_param(theta1: float) -> float:
    return 2 * theta1 + 1.0


# -- piecewise-linear matrix tables -------------------------------------------------


def _interp_many(grid, values, ts):
    ts = np.asarray(ts, dtype=float)
    K = grid.size
    k = np.clip(np.searchsorted(grid, ts, side="right") - 1, 0, K - 2)
    w = ((ts - grid[k]) / (grid[k + 1] - grid[k]))[:, None, None]
    return (1 - w) * values[k] + w * values[k + 1]


def _table_function(grid, values, label) -> SampledMatrixFunction:
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.size == 1:
        return SampledMatrixFunction(lambda t: values[0], values.shape[1:],
                                     lambda ts: np.broadcast_to(values[0], (len(ts),) + values.shape[1:]),
                                     label)
    return SampledMatrixFunction(lambda t: _interp_many(grid, values, [t])[0], values.shape[1:],
                                 lambda ts: _interp_many(grid, values, ts), label)


@dataclass(frozen=True)
class RiccatiSolution:
    L_param: float
    grid: np.ndarray                 # increasing
    S: np.ndarray                    # (K, n, n)
    window: tuple                    # requested (T0, T1)
    valid_window: tuple              # largest positive definite run
    terminal_time: float
    theta1: float | None = None
    theta2: float | None = None
    source_rates: dict | None = None
    residual: float = float("nan")
    truncated: bool = False
    discarded: float = 0.0
    notes: tuple = ()

    def at(self, t) -> np.ndarray:
        return _interp_many(self.grid, self.S, np.atleast_1d(t))

    def valid_slice(self) -> slice:
        lo, hi = self.valid_window
        i = int(np.searchsorted(self.grid, lo - 1e-12))
        j = int(np.searchsorted(self.grid, hi + 1e-12))
        return slice(i, j)

    def to_dict(self) -> dict:
        eig = np.linalg.eigvalsh(self.S)
        return {
            "L_param": self.L_param,
            "window": list(self.window),
            "valid_window": list(self.valid_window),
            "terminal_time": self.terminal_time,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "source_rates": self.source_rates,
            "residual": self.residual,
            "truncated": self.truncated,
            "discarded": self.discarded,
            "lambda_min": float(eig[:, 0].min()),
            "lambda_max": float(eig[:, -1].max()),
            "points": int(self.grid.size),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class FeedbackGain:
    grid: np.ndarray
    F: np.ndarray                    # (K, p, n)

    def at(self, t) -> np.ndarray:
        return _interp_many(self.grid, self.F, np.atleast_1d(t))

    def function(self) -> SampledMatrixFunction:
        return _table_function(self.grid, self.F, "F")


@dataclass(frozen=True)
class ObserverGain:
    """Observer gain ``L(t)`` (n x m); tabulated, or exact when ``exact`` is set."""

    grid: np.ndarray
    L: np.ndarray                    # (K, n, m)
    exact: object = None

    @classmethod
    def from_function(cls, fn, grid) -> "ObserverGain":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, fn.evaluate_many(grid), fn)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def function(self):
        return self.exact if self.exact is not None else _table_function(self.grid, self.L, "L")

    def at(self, t) -> np.ndarray:
        return self.function().evaluate_many(np.atleast_1d(np.asarray(t, dtype=float)))

    def to_dict(self) -> dict:
        out = {"grid": self.grid.tolist(), "L": self.L.tolist()}
        if isinstance(self.exact, MatrixFunction):
            out["expr"] = self.exact.sources()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ObserverGain":
        try:
            grid = np.asarray(data["grid"], dtype=float)
            if "expr" in data:
                return cls.from_function(MatrixFunction.parse(data["expr"]), grid)
            L = np.asarray(data["L"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad gain file: {exc}") from exc
        if L.ndim != 3 or L.shape[0] != grid.size:
            raise ConfigError("gain table must have one n x m matrix per grid point")
        if grid.size < 1 or np.any(np.diff(grid) <= 0):
            raise ConfigError("gain grid must be strictly increasing")
        return cls(grid, L)


# -- Riccati ------------------------------------------------------------------------


def _riccati_rhs(system: LtvSystem, L_param: float):
    n = system.n
    A = system.A
    B = system.B
    eye = np.eye(n)

    def f(t, S):
        At = A.evaluate_many(t) + L_param * eye
        out = -np.swapaxes(At, 1, 2) @ S - S @ At - eye
        if B is not None:
            SB = S @ B.evaluate_many(t)
            out = out + SB @ np.swapaxes(SB, 1, 2)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    return f


def _symmetrize(S):
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _pd_mask(S) -> np.ndarray:
    ok = np.zeros(len(S), dtype=bool)
    for k, m in enumerate(S):
        try:
            np.linalg.cholesky(m)
            ok[k] = True
        except np.linalg.LinAlgError:
            pass
    return ok


def _longest_run(mask) -> tuple[int, int] | None:
    best, start = None, None
    for k, v in enumerate(list(mask) + [False]):
        if v and start is None:
            start = k
        elif not v and start is not None:
            if best is None or k - start > best[1] - best[0]:
                best = (start, k)
            start = None
    return best


def solve_riccati(system: LtvSystem, L_param: float, window, terminal=None, *,
                  grid=None, step: float | None = None, discard: float | bool = False,
                  rtol: float = RICCATI_RTOL, atol: float = RICCATI_ATOL,
                  rates: tuple | None = None) -> RiccatiSolution:
    """Integrate the Riccati equation backward over ``window = (T0, T1)``.

    ``discard=True`` starts the integration ``discard_length(L_param)`` past
    ``T1`` (as far as the domain allows) so the terminal transient is gone by
    the time the window is reached; a number sets that length directly.
    ``rates=(mu0, mu1, eta)`` records the certificate rates and the derived
    ``theta1``, ``theta2``.
    """
    if not L_param >= 0 or not math.isfinite(L_param):
        raise ValueError("L_param must be finite and non-negative")
    T0, T1 = (float(w) for w in window)
    if not T0 < T1:
        raise ValueError("window must satisfy T0 < T1")
    n = system.n
    system.domain.check_span(T0, T1)
    notes = []

    want = discard_length(L_param) if discard is True else float(discard or 0.0)
    T_end = T1
    if want > 0:
        T_end = min(T1 + want, system.domain.upper)
        for p in system.domain.excluded:
            if T1 < p <= T_end + system.domain.margin:
                T_end = min(T_end, p - 2 * system.domain.margin - 1e-9)
        if T_end - T1 < want - 1e-12:
            notes.append(f"domain allows only {T_end - T1:g} of the {want:g} discard "
                         "interval; the terminal transient reaches into the window")
    if grid is None:
        h = step if step is not None else 0.01 * (T1 - T0)
        K = max(2, int(math.ceil((T1 - T0) / h - 1e-9)) + 1)
        grid = np.linspace(T0, T1, K)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != T0 or grid[-1] != T1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must increase from T0 to T1")

    if terminal is None:
        S_T = np.eye(n)
    else:
        S_T = np.asarray(terminal, dtype=float).reshape(n, n)
        if np.max(np.abs(S_T - S_T.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(S_T))):
            raise ValueError("terminal value must be symmetric")
        S_T = _symmetrize(S_T)

    outs = grid[::-1] if T_end > T1 else grid[-2::-1]
    rhs = _riccati_rhs(system, L_param)
    try:
        res = ode.integrate(rhs, [T_end], S_T[None], outs[None, :],
                            rtol=rtol, atol=atol, post_step=_symmetrize)
    except ode.StepSizeUnderflow as exc:
        raise RiccatiBlowUp(exc.time_reached) from exc
    if res.diverged[0]:
        raise RiccatiBlowUp(float(res.time_reached[0]))
    vals = res.values[0]
    if T_end == T1:
        vals = np.concatenate([S_T[None], vals])
    S = _symmetrize(vals[::-1])

    pd = _pd_mask(S)
    run = _longest_run(pd)
    if run is None:
        raise RiccatiError("solution is nowhere positive definite on the window")
    i, j = run
    valid = (float(grid[i]), float(grid[j - 1]))
    truncated = (i, j) != (0, grid.size)
    if truncated:
        notes.append(f"positive definiteness lost; valid window {valid}")

    residual = riccati_residual(system, L_param, grid, S, rtol=rtol * 1e-2, atol=atol * 1e-2)
    theta1 = theta2 = None
    src = None
    if rates is not None:
        mu0, mu1, eta = (float(r) for r in rates)
        theta1, theta2 = theta_constants(mu0, mu1, eta)
        src = {"mu0": mu0, "mu1": mu1, "eta": eta}
    return RiccatiSolution(float(L_param), grid, S, (T0, T1), valid, float(T_end), theta1, theta2,
                           src, residual, truncated, float(T_end - T1), tuple(notes))


def riccati_residual(system, L_param, grid, S, *, rtol=1e-12, atol=1e-14) -> float:
    """Integral-form defect of the tabulated solution.

    Every grid interval is re-integrated from its right end with tighter
    tolerances; the mismatch at the left end divided by the interval length
    is the mean of ``S' - RHS(S)`` over that interval.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        return 0.0
    h = np.diff(grid)
    res = ode.integrate(_riccati_rhs(system, L_param), grid[1:], S[1:], grid[:-1, None],
                        rtol=rtol, atol=atol, post_step=_symmetrize)
    if res.diverged.any():
        return float("inf")
    back = res.values[:, 0]
    scale = np.maximum(1.0, np.max(np.abs(S[:-1]), axis=(1, 2)))
    err = np.max(np.abs(back - S[:-1]), axis=(1, 2)) / (h * scale)
    return float(err.max())


def feedback_gain(sol: RiccatiSolution, system: LtvSystem) -> FeedbackGain:
    """``F(t) = B^T(t) S(t)`` on the valid part of the grid."""
    sl = sol.valid_slice()
    grid = sol.grid[sl]
    if grid.size == 0:
        raise RiccatiError("empty valid window")
    B = system.B
    if B is None:
        return FeedbackGain(grid, np.zeros((grid.size, 0, system.n)))
    Bt = np.swapaxes(B.evaluate_many(grid), 1, 2)
    return FeedbackGain(grid, Bt @ sol.S[sl])


def _window_domain(system, lo, hi) -> TimeDomain:
    d = system.domain
    return TimeDomain(max(lo, d.lower), min(hi, d.upper),
                      tuple(p for p in d.excluded if lo < p < hi), d.margin)


def closed_loop_system(system: LtvSystem, gain: FeedbackGain) -> LtvSystem:
    """Plant ``A - B F`` restricted to the gain's grid."""
    n = system.n
    F = gain.function()
    A = combine([(1.0, [system.A]), (-1.0, [system.require("B"), F])], (n, n))
    return LtvSystem(A, domain=_window_domain(system, gain.grid[0], gain.grid[-1]),
                     name=f"{system.name}-closed-loop")


def error_system(system: LtvSystem, gain: ObserverGain) -> LtvSystem:
    """Plant ``A - L C`` of the estimation error, restricted to the gain's span."""
    n = system.n
    A = combine([(1.0, [system.A]), (-1.0, [gain.function(), system.require("C")])], (n, n))
    lo, hi = gain.span
    return LtvSystem(A, domain=_window_domain(system, lo, hi), name=f"{system.name}-error")


def shifted_system(system: LtvSystem, ell: float) -> LtvSystem:
    """``A(t) + ell I`` with the same input and output maps."""
    if not ell > 0:
        raise ValueError("ell must be positive")
    return LtvSystem(system.A.shifted(ell), system.B, system.C, system.D, system.domain,
                     f"{system.name}+{ell:g}I")


# -- closed-loop and Lyapunov checks ---------------------------------------------------


def verify_closed_loop_bound(system: LtvSystem, gain: FeedbackGain, L_param: float, rates, *,
                             t_grid=None, max_lag: float | None = None,
                             margin_tol: float = 1e-9) -> CertificateVerdict:
    """Check ``||Phi_{A-BF}(t, s)|| <= M e^{(th1+th2)|s|} e^{-(L-th1)(t-s)}``.

    ``rates = (mu0, mu1, eta)``.  ``M`` is fitted on ``t_grid`` and the envelope
    is then verified on the 2x refined grid; ``margin_tol`` absorbs the
    integration noise on points the two grids share.
    """
    mu0, mu1, eta = (float(r) for r in rates)
    th1, th2 = theta_constants(mu0, mu1, eta)
    if not L_param > 2 * th1:
        raise PreconditionError(f"L = {L_param:g} must exceed 2*theta1 = {2 * th1:g}")
    cl = closed_loop_system(system, gain)
    if t_grid is None:
        t_grid = np.linspace(gain.grid[0], gain.grid[-1], 41)
    beta, delta = L_param - th1, th1 + th2
    base = sample_log_norms(cl, t_grid, max_lag, direction="forward")
    probe = NuesEnvelope(1.0, beta, delta)
    logM = max(0.0, float(np.max(base.log_norm - probe.log_bound(base.t, base.tau))))
    target = NuesEnvelope(math.exp(logM), beta, delta)
    v = certify_nues(cl, t_grid, "forward", target, max_lag=max_lag, refine=True,
                     margin_tol=margin_tol)
    v.details.update({"theta1": th1, "theta2": th2, "L_param": L_param})
    return v


@dataclass
class RiccatiBoundsReport:
    passed: bool
    C1: float
    C2: float
    phi1: float
    phi2: float
    max_inequality: float        # max over grid of lambda_max(S' + V^T S + S V + I + L S)
    witness: list = field(default_factory=list)
    envelope: NuesEnvelope | None = None
    tol: float = 1e-6

    def to_dict(self):
        return {"passed": self.passed, "C1": self.C1, "C2": self.C2, "phi1": self.phi1,
                "phi2": self.phi2, "max_inequality": self.max_inequality,
                "witness": self.witness, "tol": self.tol,
                "envelope": None if self.envelope is None else self.envelope.to_dict()}


def _sandwich_rate(u, q):
    """Smallest rate with ``q - 2 rate u`` trend-free, or 0 for too few points."""
    g = _groups(np.zeros(u.size), 2 * u, q)
    if not g:
        return 0.0
    r = _scan_min_rate(g, 0.0, 50.0, TREND_TOL)
    return 50.0 if r is None else r


def verify_proposition_17(plant: LtvSystem, grid, S, L_param: float, *,
                          tol: float = 1e-6) -> RiccatiBoundsReport:
    """Sandwich fit of ``S`` and the inequality ``S' + V^T S + S V <= -(I + L S)``.

    ``S'`` is a central difference with the grid spacing (one-sided at the ends).
    """
    grid = np.asarray(grid, dtype=float)
    S = _symmetrize(np.asarray(S, dtype=float))
    if grid.size < 3:
        raise ValueError("need at least three grid points")
    pd = _pd_mask(S)
    if not pd.all():
        raise RiccatiError(f"S is not positive definite at t={grid[~pd][0]!r}")
    n = plant.n
    Sdot = np.gradient(S, grid, axis=0)
    V = plant.A.evaluate_many(grid)
    Q = Sdot + np.swapaxes(V, 1, 2) @ S + S @ V + np.eye(n) + L_param * S
    lam = np.linalg.eigvalsh(_symmetrize(Q))[:, -1]
    bad = np.flatnonzero(lam > tol)
    eig = np.linalg.eigvalsh(S)
    u = np.abs(grid)
    phi1 = _sandwich_rate(u, -np.log(eig[:, 0]))
    phi2 = _sandwich_rate(u, np.log(eig[:, -1]))
    C1 = float(np.min(eig[:, 0] * np.exp(2 * phi1 * u)))
    C2 = float(np.max(eig[:, -1] * np.exp(-2 * phi2 * u)))
    env = None
    if L_param / 2 - phi1 > 0:
        env = NuesEnvelope(math.sqrt(C2 / C1), L_param / 2 - phi1, phi1 + phi2)
    witness = [{"t": float(grid[k]), "lambda_max": float(lam[k])} for k in bad[:5]]
    return RiccatiBoundsReport(bad.size == 0, C1, C2, phi1, phi2, float(lam.max()), witness, env, tol)


@dataclass
class PhiIntegralReport:
    t: float
    sigma: float
    lambda_min: float
    lambda_max: float
    lower: float                 # zeta1(sigma) e^{-2 eta |t|}
    upper: float                 # zeta2(sigma) e^{2 eta |t|}
    zeta1: float
    zeta2: float

    @property
    def passed(self) -> bool:
        return self.lower <= self.lambda_min * (1 + 1e-9) and self.lambda_max <= self.upper * (1 + 1e-9)

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def zeta_bounds(growth: GrowthEnvelope, sigma: float) -> tuple[float, float]:
    K0, a, eta = growth.K0, growth.a, growth.eta
    r = a + eta
    z1 = -math.expm1(-2 * r * sigma) / (2 * K0 ** 2 * r) if r > 0 else sigma / K0 ** 2
    z2 = K0 ** 2 * math.expm1(2 * a * sigma) / (2 * a) if a > 0 else K0 ** 2 * sigma
    return z1, z2


def phi_integral_bounds(plant: LtvSystem, t: float, sigma: float,
                        growth: GrowthEnvelope) -> PhiIntegralReport:
    """Integral of ``Phi(s, t)^T Phi(s, t)`` over ``[t, t+sigma]`` against its growth-based bounds."""
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    z1, z2 = zeta_bounds(growth, sigma)
    w = math.exp(2 * growth.eta * abs(t))
    if sigma == 0:
        return PhiIntegralReport(t, 0.0, 0.0, 0.0, 0.0, 0.0, z1, z2)
    probe = LtvSystem(plant.A, C=MatrixFunction.constant(np.eye(plant.n)), domain=plant.domain)
    G, _ = gramian_windows(probe, "M", [t], [t + sigma])
    ev = np.linalg.eigvalsh(_symmetrize(G[0]))
    return PhiIntegralReport(float(t), float(sigma), float(ev[0]), float(ev[-1]), z1 / w, z2 * w,
                             z1, z2)


# -- observer synthesis -------------------------------------------------------------------


@dataclass
class ObserverSynthesis:
    gain: ObserverGain
    riccati: RiccatiSolution
    dual_gain: FeedbackGain
    certificates: dict               # name -> CertificateVerdict
    rates: dict
    L_param: float
    error_certificate: CertificateVerdict | None = None
    consistency: float | None = None

    def to_dict(self) -> dict:
        out = {
            "L_param": self.L_param,
            "rates": self.rates,
            "riccati": self.riccati.to_dict(),
            "certificates": {k: v.to_dict() for k, v in self.certificates.items()},
            "gain": self.gain.to_dict(),
        }
        if self.error_certificate is not None:
            out["error_certificate"] = self.error_certificate.to_dict()
        if self.consistency is not None:
            out["consistency"] = self.consistency
        return out


def synthesize_observer(system: LtvSystem, window, L_param: float | None = None, *,
                        t_grid=None, sigma_grid=None, step: float | None = None,
                        certify_error: bool = True, check_consistency: bool = True,
                        rtol: float = RICCATI_RTOL, atol: float = RICCATI_ATOL) -> ObserverSynthesis:
    """Observer gain for ``(A, C)`` on ``window`` through the dual Riccati equation.

    Gates: the plant must have bounded growth and ``(A, C)`` must be
    nonuniformly completely observable on the window grid.  The dual's
    controllability rates equal the observability rates of ``(A, C)``
    (``M = K_d`` and ``N = W_d`` on reflected windows); the growth rate is fitted
    on the dual plant itself.  ``L_param`` defaults to ``2 theta1 + 1``.
    """
    system.require("C")
    T0, T1 = (float(w) for w in window)
    if not T0 < T1:
        raise ValueError("window must satisfy T0 < T1")
    system.domain.check_span(T0, T1)
    if t_grid is None:
        t_grid = np.linspace(T0, T1, 41)
    t_grid = np.asarray(t_grid, dtype=float)
    dual = dual_system(system)
    plant_d = LtvSystem(dual.A, domain=dual.domain, name=dual.name)

    certs = {}
    growth = fit_growth_envelope(plant_d, -t_grid[::-1])
    certs["dual_growth"] = growth
    if not growth.certified:
        raise PreconditionError("dual plant has no bounded-growth certificate", growth)
    for kind in ("M", "N"):
        v = certify_gramian_envelope(system, kind, t_grid, sigma_grid)
        certs[f"nuco_{kind}"] = v
        if not v.certified:
            raise PreconditionError(f"no NUCO certificate ({kind}: {v.status})", v)
    mu0 = max(certs["nuco_M"].params.nu0, certs["nuco_N"].params.nu0)
    mu1 = max(certs["nuco_M"].params.nu1, certs["nuco_N"].params.nu1)
    eta = growth.params.eta
    th1, th2 = theta_constants(mu0, mu1, eta)
    if L_param is None:
        L_param = default_L_param(th1)
    elif not L_param > 2 * th1:
        raise PreconditionError(f"L = {L_param:g} must exceed 2*theta1 = {2 * th1:g}")
    rates = {"mu0": mu0, "mu1": mu1, "eta": eta, "theta1": th1, "theta2": th2}

    sol = solve_riccati(dual, L_param, (-T1, -T0), step=step, discard=True, rtol=rtol,
                        atol=atol, rates=(mu0, mu1, eta))
    if sol.truncated:
        raise RiccatiError(f"dual Riccati solution lost positive definiteness; valid on "
                           f"{sol.valid_window}")
    G = feedback_gain(sol, dual)
    # L(t) = G^T(-t), tabulated on the reflected grid
    grid = -G.grid[::-1]
    Lt = np.swapaxes(G.F[::-1], 1, 2)
    gain = ObserverGain(grid, Lt)
    out = ObserverSynthesis(gain, sol, G, certs, rates, float(L_param))
    if certify_error:
        err = error_system(system, gain)
        v = certify_nues(err, t_grid, "forward", max_lag=None)
        if v.certified:
            # the fit holds on grid pairs; widen M so it covers every pair of times
            fine = np.unique(np.concatenate([t_grid, 0.5 * (t_grid[1:] + t_grid[:-1])]))
            grid_env = v.params
            v.params = extend_to_continuum(err, fine, grid_env)
            v.details["grid_M"] = grid_env.M
            v.note += f"; M widened by {v.params.M / grid_env.M:.4g} for off-grid times"
        out.error_certificate = v
    if check_consistency:
        out.consistency = gain_consistency(system, gain, G, dual)
    return out


def gain_consistency(system, gain: ObserverGain, dual_gain: FeedbackGain, dual=None,
                     points: int = 7) -> float:
    """Max relative gap between ``Phi_err(t, s)`` and ``Phi_{dual cl}(-s, -t)^T``."""
    dual = dual if dual is not None else dual_system(system)
    err = error_system(system, gain)
    cl = closed_loop_system(dual, dual_gain)
    lo, hi = gain.span
    ts = np.linspace(lo, hi, points)
    pairs = np.array([(t, s) for t in ts for s in ts if t > s])
    P = transitions(err, pairs)
    Q = transitions(cl, -pairs[:, ::-1])
    num = np.linalg.norm((P - np.swapaxes(Q, 1, 2)).reshape(len(P), -1), axis=1)
    den = np.maximum(np.linalg.norm(P.reshape(len(P), -1), axis=1), 1e-300)
    return float(np.max(num / den))


# -- simulation ---------------------------------------------------------------------------


@dataclass
class ObserverTrajectory:
    t: np.ndarray
    state: np.ndarray
    estimate: np.ndarray
    error_norm: np.ndarray
    envelope: np.ndarray | None
    crosscheck: float                 # max |(x - xhat) - e| / max(1, ||e0||)

    error: np.ndarray | None = None

    def within_envelope(self, rtol: float = 1e-9) -> bool:
        if self.envelope is None:
            raise ValueError("no envelope attached")
        return bool(np.all(self.error_norm <= self.envelope * (1 + rtol)))

    def write_csv(self, path) -> None:
        n = self.state.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "error_norm", "envelope"] + [f"state_{i}" for i in range(n)])
            env = self.envelope if self.envelope is not None else np.full(self.t.size, np.nan)
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k])), repr(float(self.error_norm[k])),
                            repr(float(env[k]))] + [repr(float(v)) for v in self.state[k]])

    def summary(self) -> dict:
        out = {"t0": float(self.t[0]), "t1": float(self.t[-1]), "points": int(self.t.size),
               "error_norm_initial": float(self.error_norm[0]),
               "error_norm_final": float(self.error_norm[-1]),
               "crosscheck": self.crosscheck}
        if self.envelope is not None:
            out["within_envelope"] = self.within_envelope()
            out["min_envelope_margin"] = float(np.min(self.envelope - self.error_norm))
        return out


def simulate_observer(system: LtvSystem, gain: ObserverGain, x0, xhat0, horizon, *,
                      step: float | None = None, envelope: NuesEnvelope | None = None,
                      rtol: float = 1e-12, atol: float = 1e-14) -> ObserverTrajectory:
    """Integrate plant and observer together over ``horizon = (t0, t1)``.

    The error ``e' = (A - L C) e`` is integrated as part of the same system
    and cross-checked against ``x - xhat``.  With an ``envelope`` the bound
    ``envelope.bound(t, t0) * ||e(t0)||`` is reported at every output point.
    """
    n = system.n
    C = system.require("C")
    x0 = np.asarray(x0, dtype=float).reshape(n)
    xh0 = np.asarray(xhat0, dtype=float).reshape(n)
    t0, t1 = (float(h) for h in horizon)
    if not t0 < t1:
        raise ValueError("horizon must satisfy t0 < t1")
    lo, hi = gain.span
    if t0 < lo - 1e-12 or t1 > hi + 1e-12:
        raise ValueError(f"gain defined on [{lo}, {hi}], horizon is [{t0}, {t1}]")
    system.domain.check_span(t0, t1)
    h = step if step is not None else (t1 - t0) / 200
    K = max(2, int(math.ceil((t1 - t0) / h - 1e-9)) + 1)
    ts = np.linspace(t0, t1, K)
    Lf = gain.function()
    A = system.A

    # x, xhat and e are advanced together; e is kept as its own component so
    # its decay is not lost to cancellation in x - xhat
    def f(t, y):
        At = A.evaluate_many(t)
        Ct = C.evaluate_many(t)
        Lt = Lf.evaluate_many(t)
        x = y[:, :n, None]
        xh = y[:, n:2 * n, None]
        e = y[:, 2 * n:, None]
        dx = At @ x
        dxh = At @ xh + Lt @ (Ct @ x - Ct @ xh)
        de = At @ e - Lt @ (Ct @ e)
        return np.concatenate([dx, dxh, de], axis=1)[..., 0]

    e0 = x0 - xh0
    y0 = np.concatenate([x0, xh0, e0])[None]
    res = ode.integrate(f, [t0], y0, ts[None, 1:], rtol=rtol, atol=atol)
    if res.diverged[0]:
        raise ode.Divergence(float(res.time_reached[0]))
    Y = np.concatenate([y0, res.values[0]])
    x, xh, E = Y[:, :n], Y[:, n:2 * n], Y[:, 2 * n:]
    scale = max(1.0, float(np.linalg.norm(e0)))
    cross = float(np.max(np.abs((x - xh) - E)) / scale)

    enorm = np.linalg.norm(E, axis=1)
    env = None
    if envelope is not None:
        env = envelope.bound(ts, t0) * np.linalg.norm(e0)
    return ObserverTrajectory(ts, x, xh, enorm, env, cross, E)
