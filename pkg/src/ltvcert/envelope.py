"""Fitting, verifying and refuting envelope properties on sample grids.

Every property quantifies over unbounded time, so numerics can only do two
honest things: certify an envelope on a compact grid (with the margin table to
prove it) or exhibit a witness sequence along which the violation grows.

Rates (``eta``, ``nu``, ``delta``, ``beta``) are chosen by a trend test.  For a
candidate rate the residual (log-quantity minus the rate term) is grouped, and
in each group the residual maxima over three nested windows
``u <= lo + j (hi - lo) / 3`` must not grow faster than ``trend_tol`` per unit
of ``u``.  The smallest such rate is found on a coarse-to-fine scan and the
constant (``K0``, ``M``, gauges) is the extreme residual.  A refutation needs
the three window maxima to increase strictly, each step faster than
``refute_slope``, at the largest admissible rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode
from .duality import plant_adjoint, plant_dual
from .gramian import KINDS, gramian_windows
from .propagator import DEFAULT_ATOL, DEFAULT_RTOL, spectral_norms, transition_grid, transitions
from .system import LtvSystem, TimeDomain

CERTIFIED = "CERTIFIED"
REFUTED = "REFUTED"
INCONCLUSIVE = "INCONCLUSIVE"

TREND_TOL = 0.01
REFUTE_SLOPE = 0.05
SIGMA_TREND = 0.25
SINGULAR_RTOL = 1e-14
MIN_GROUP = 6
SCAN_STEPS = (0.1, 0.01, 0.001)

DEFAULT_SPAN = 20.0
DEFAULT_POINTS = 81
DEFAULT_SIGMAS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_MAX_LAG = 8.0
DEFAULT_ETA_MAX = 5.0
DEFAULT_A_MAX = 20.0
DEFAULT_RATE_CAP = 5.0
DEFAULT_BETA_MAX = 20.0
DEFAULT_DELTA_MAX = 5.0


# -- value types ----------------------------------------------------------------


@dataclass(frozen=True)
class GrowthEnvelope:
    K0: float
    a: float
    eta: float

    def log_bound(self, t, tau):
        t, tau = np.asarray(t, float), np.asarray(tau, float)
        return math.log(self.K0) + self.eta * np.abs(tau) + self.a * np.abs(t - tau)

    def to_dict(self):
        return {"K0": self.K0, "a": self.a, "eta": self.eta}


@dataclass(frozen=True)
class GramianEnvelope:
    kind: str
    nu0: float
    nu1: float
    sigma: tuple
    gauge0: tuple
    gauge1: tuple
    sigma_min: float

    def lower(self, t, sigma):
        return np.exp(-2 * self.nu0 * np.abs(t)) * self.gauge0[self.sigma.index(sigma)]

    def upper(self, t, sigma):
        return np.exp(2 * self.nu1 * np.abs(t)) * self.gauge1[self.sigma.index(sigma)]

    def to_dict(self):
        return {"kind": self.kind, "nu0": self.nu0, "nu1": self.nu1, "sigma": list(self.sigma),
                "gauge0": list(self.gauge0), "gauge1": list(self.gauge1),
                "sigma_min": self.sigma_min}


@dataclass(frozen=True)
class NuesEnvelope:
    M: float
    beta: float
    delta: float
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        if not (self.M > 0 and self.beta > 0 and self.delta >= 0):
            raise ValueError("NUES envelope needs M > 0, beta > 0, delta >= 0")

    def log_bound(self, t, s):
        t, s = np.asarray(t, float), np.asarray(s, float)
        sign = -1.0 if self.direction == "forward" else 1.0
        return math.log(self.M) + self.delta * np.abs(s) + sign * self.beta * (t - s)

    def bound(self, t, s):
        return np.exp(self.log_bound(t, s))

    def to_dict(self):
        return {"M": self.M, "beta": self.beta, "delta": self.delta, "direction": self.direction}


@dataclass
class CertificateVerdict:
    status: str
    property: str
    params: object = None
    witness: list = field(default_factory=list)
    note: str = ""
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def refuted(self) -> bool:
        return self.status == REFUTED

    def to_dict(self) -> dict:
        out = {"status": self.status, "property": self.property, "note": self.note}
        if self.params is not None:
            out["params"] = self.params.to_dict() if hasattr(self.params, "to_dict") else self.params
        if self.witness:
            out["witness"] = self.witness
        summary = {k: v for k, v in self.margins.items() if k != "table"}
        if summary:
            out["margins"] = summary
        if self.details:
            out["details"] = self.details
        return out


# -- grids ----------------------------------------------------------------------


def default_t_grid(domain: TimeDomain, points: int = DEFAULT_POINTS,
                   span: float = DEFAULT_SPAN) -> np.ndarray:
    lo, hi = domain.clip(-span, span)
    if not lo < hi:
        raise ValueError(f"domain {domain.describe()} does not meet [-{span}, {span}]")
    grid = np.linspace(lo, hi, points)
    return grid[domain.contains(grid)]


def refine_grid(grid) -> np.ndarray:
    """Insert midpoints (a 2x refinement)."""
    g = np.asarray(grid, dtype=float)
    if g.size < 2:
        return g.copy()
    mids = 0.5 * (g[1:] + g[:-1])
    out = np.empty(2 * g.size - 1)
    out[0::2] = g
    out[1::2] = mids
    return out


def _segments(system: LtvSystem, grid) -> list[np.ndarray]:
    """Split a sorted grid at excluded points so no leg crosses a singularity."""
    g = np.unique(np.asarray(grid, dtype=float))
    g = g[system.domain.contains(g)]
    cuts = [p for p in system.domain.excluded if g.size and g[0] < p < g[-1]]
    parts, start = [], 0
    for p in cuts:
        k = int(np.searchsorted(g, p))
        parts.append(g[start:k])
        start = k
    parts.append(g[start:])
    return [p for p in parts if p.size]


@dataclass
class LogNormSamples:
    t: np.ndarray
    tau: np.ndarray
    log_norm: np.ndarray

    def select(self, mask) -> "LogNormSamples":
        return LogNormSamples(self.t[mask], self.tau[mask], self.log_norm[mask])

    def __len__(self):
        return self.t.size


def sample_log_norms(system: LtvSystem, t_grid, max_lag: float | None = DEFAULT_MAX_LAG, *,
                     direction: str = "both", refine: bool = False,
                     rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> LogNormSamples:
    """``log ||Phi(t, tau)||`` for all grid pairs with ``|t - tau| <= max_lag``.

    ``direction`` keeps pairs with ``t >= tau`` ("forward"), ``t <= tau``
    ("backward") or both.  Legs that overflow give ``+inf`` log norms.
    """
    grid = refine_grid(t_grid) if refine else np.asarray(t_grid, dtype=float)
    ts, taus, vals = [], [], []
    for seg in _segments(system, grid):
        cache = _robust_grid(system, seg, rtol, atol)
        if max_lag is None:
            hops = None
        else:
            step = np.min(np.diff(seg)) if seg.size > 1 else 1.0
            hops = int(math.ceil(max_lag / step + 1e-9)) + 1
        i, j, v = cache.log_norm_table(hops)
        t, tau = seg[i], seg[j]
        keep = np.ones(t.size, dtype=bool)
        if max_lag is not None:
            keep &= np.abs(t - tau) <= max_lag * (1 + 1e-12) + 1e-12
        if direction == "forward":
            keep &= t >= tau
        elif direction == "backward":
            keep &= t <= tau
        ts.append(t[keep])
        taus.append(tau[keep])
        vals.append(v[keep])
    t = np.concatenate(ts)
    tau = np.concatenate(taus)
    v = np.concatenate(vals)
    order = np.lexsort((tau, t))
    return LogNormSamples(t[order], tau[order], v[order])


def _robust_grid(system, seg, rtol, atol):
    try:
        return transition_grid(system, seg, rtol=rtol, atol=atol)
    except ode.Divergence:
        from .propagator import PropagationCache, propagate
        lo, hi = seg[:-1], seg[1:]
        res = propagate(system, np.concatenate([lo, hi]), np.concatenate([hi, lo])[:, None],
                        rtol=rtol, atol=atol, allow_divergence=True)
        legs = res.values[:, 0]
        K = seg.size
        return PropagationCache(seg, legs[:K - 1], legs[K - 1:], rtol, atol)


def pair_log_norms(system: LtvSystem, pairs, **kw) -> LogNormSamples:
    """Log norms for explicit ``(t, tau)`` pairs by direct integration."""
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    mats = transitions(system, pairs, **kw)
    with np.errstate(divide="ignore"):
        v = np.log(spectral_norms(mats))
    return LogNormSamples(pairs[:, 0].copy(), pairs[:, 1].copy(), v)


def merge_samples(*samples: LogNormSamples) -> LogNormSamples:
    t = np.concatenate([s.t for s in samples])
    tau = np.concatenate([s.tau for s in samples])
    v = np.concatenate([s.log_norm for s in samples])
    order = np.lexsort((tau, t))
    return LogNormSamples(t[order], tau[order], v[order])


# -- trend machinery --------------------------------------------------------------


class _Group:
    """Points of one group with the three nested windows along ``u``."""

    def __init__(self, key, u, base, idx):
        self.key = key
        self.u = u
        self.base = base
        self.idx = idx
        lo, hi = float(u.min()), float(u.max())
        self.bounds = lo + (hi - lo) * np.arange(1, 4) / 3.0
        tol = 1e-12 * max(1.0, abs(hi))
        self.masks = [u <= b + tol for b in self.bounds]
        self.span = hi - lo
        self.tail = False   # measure only the last window step

    def maxima(self, rates: np.ndarray):
        """Window maxima for each candidate rate, shape (R, 3), plus argmax indices."""
        res = self.base[None, :] - rates[:, None] * self.u[None, :]
        res = np.where(np.isnan(res), np.inf, res)
        m = np.empty((rates.size, 3))
        arg = np.empty((rates.size, 3), dtype=int)
        for j, mask in enumerate(self.masks):
            sub = np.where(mask[None, :], res, -np.inf)
            arg[:, j] = np.argmax(sub, axis=1)
            m[:, j] = sub[np.arange(rates.size), arg[:, j]]
        return m, arg

    def slopes(self, rates):
        m, _ = self.maxima(rates)
        b = self.bounds
        first = 1 if self.tail else 0
        with np.errstate(invalid="ignore"):
            s = (m[:, 2] - m[:, first]) / (b[2] - b[first])
        return np.where(np.isnan(s), np.inf, s)


def _groups(keys, u, base, min_points=MIN_GROUP, min_span=1e-9):
    keys = np.asarray(keys)
    out = []
    for k in np.unique(keys):
        sel = np.flatnonzero(keys == k)
        if sel.size < min_points:
            continue
        g = _Group(k, u[sel], base[sel], sel)
        if g.span > min_span:
            out.append(g)
    return out


def _trend(groups, rates) -> np.ndarray:
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if not groups:
        return np.zeros(rates.size)
    return np.max(np.stack([g.slopes(rates) for g in groups]), axis=0)


def _scan_min_rate(groups, lo, hi, tol, steps=SCAN_STEPS):
    """Smallest rate in ``[lo, hi]`` whose trend is at most ``tol`` (coarse to fine)."""
    if _trend(groups, [hi])[0] > tol:
        return None
    a, b = lo, hi
    found = hi
    for h in steps:
        cand = np.append(np.arange(a, b, h), b)
        ok = np.flatnonzero(_trend(groups, cand) <= tol)
        found = float(cand[ok[0]])
        a, b = max(lo, found - h), found
    return round(found, 12)


def _refutation(groups, rate, refute_slope):
    """Group with strictly growing window maxima at ``rate``; returns witness indices."""
    best = None
    for g in groups:
        m, arg = g.maxima(np.array([rate]))
        m, arg = m[0], arg[0]
        b = g.bounds
        if not np.all(np.isfinite(m)):
            inc = np.all(np.diff(np.where(np.isfinite(m), m, np.inf)) >= 0) and m[0] < m[2]
            s1 = s2 = np.inf if inc else -np.inf
        else:
            s1 = (m[1] - m[0]) / (b[1] - b[0])
            s2 = (m[2] - m[1]) / (b[2] - b[1])
        if s1 > refute_slope and s2 > refute_slope:
            # prefer the widest group, then the steepest growth
            score = (g.span, min(s1, s2))
            if best is None or score > best[0]:
                best = (score, g, g.idx[arg], m)
    return best


# -- growth envelope ----------------------------------------------------------------


def fit_growth_envelope(plant: LtvSystem, t_grid=None, *, max_lag: float = DEFAULT_MAX_LAG,
                        eta_max: float = DEFAULT_ETA_MAX, a_max: float = DEFAULT_A_MAX,
                        samples: LogNormSamples | None = None, refine: bool = True,
                        uniform: bool = False, trend_tol: float = TREND_TOL,
                        refute_slope: float = REFUTE_SLOPE, **kw) -> CertificateVerdict:
    """Fit ``||Phi(t, tau)|| <= K0 e^{eta |tau|} e^{a |t - tau|}`` (nonuniform bounded growth).

    ``eta`` is the smallest rate for which the residual at fixed lag
    ``|t - tau|`` shows no growth in ``|tau|``; ``a`` likewise for the
    lag-wise maxima; ``K0`` is the largest residual.  ``uniform=True`` forces
    ``eta = 0`` (bounded growth in the uniform sense).
    """
    if samples is None:
        if t_grid is None:
            t_grid = default_t_grid(plant.domain)
        samples = sample_log_norms(plant, t_grid, max_lag, refine=refine, **kw)
    prop = "growth-uniform" if uniform else "growth"
    if len(samples) == 0:
        raise ValueError("empty pair grid")
    lag = np.abs(samples.t - samples.tau)
    u = np.abs(samples.tau)
    ell = samples.log_norm
    lag_key = np.round(lag, 9)
    # forward and backward pairs are grouped apart: on a half-line one
    # direction only exists far from the edge
    grp = _groups(np.round(samples.t - samples.tau, 9), u, ell)

    diverged = ~np.isfinite(ell) & (ell > 0)
    if diverged.any():
        w = _witness_points(samples, np.flatnonzero(diverged)[:3], ell)
        return CertificateVerdict(REFUTED, prop, witness=w,
                                  note="transition overflow (divergence) on the sample grid")

    cap = 0.0 if uniform else eta_max
    eta = _scan_min_rate(grp, 0.0, cap, trend_tol) if not uniform else (
        0.0 if _trend(grp, [0.0])[0] <= trend_tol else None)
    if eta is None:
        ref = _refutation(grp, cap, refute_slope)
        if ref is not None:
            score, g, idx, m = ref
            w = _witness_points(samples, idx, ell - cap * u,
                                extra={"lag": float(g.key), "eta": cap})
            return CertificateVerdict(
                REFUTED, prop, witness=w,
                note=(f"residual log||Phi|| - {cap:g}|tau| at fixed lag {float(g.key):g} keeps "
                      f"growing in |tau| (window slopes > {refute_slope:g}); no eta <= {cap:g} fits"),
                details={"trend_at_cap": float(_trend(grp, [cap])[0])})
        return CertificateVerdict(INCONCLUSIVE, prop,
                                  note=f"no eta <= {cap:g} removes the |tau| trend, "
                                       "but the growth is not monotone on the grid",
                                  details={"trend_at_cap": float(_trend(grp, [cap])[0])})

    # a: lag-wise maxima of the eta-corrected residual must not grow with lag
    res_eta = ell - eta * u
    keys = np.unique(lag_key)
    per_lag = np.array([res_eta[lag_key == k].max() for k in keys])
    lag_group = _groups(np.zeros(keys.size), keys.astype(float), per_lag, min_points=3)
    a = _scan_min_rate(lag_group, 0.0, a_max, trend_tol)
    if a is None:
        ref = _refutation(lag_group, a_max, refute_slope)
        status = REFUTED if ref is not None else INCONCLUSIVE
        return CertificateVerdict(status, prop,
                                  note=f"lag-wise growth exceeds a_max={a_max:g}",
                                  details={"stage": "lag", "eta": eta})
    a = max(a, 1e-3)
    margin_raw = ell - eta * u - a * lag
    logK0 = max(0.0, float(np.max(margin_raw)))
    env = GrowthEnvelope(math.exp(logK0), a, eta)
    margins = logK0 - margin_raw
    return CertificateVerdict(
        CERTIFIED, prop, params=env,
        note=f"bounded growth on {len(samples)} sampled pairs",
        margins=_margin_summary(samples.t, samples.tau, margins))


def _witness_points(samples, idx, residual, extra=None):
    out = []
    for k in idx:
        row = {"t": float(samples.t[k]), "tau": float(samples.tau[k]),
               "log_norm": float(samples.log_norm[k]), "residual": float(residual[k])}
        if extra:
            row.update(extra)
        out.append(row)
    return out


def _margin_summary(t, tau, margins, names=("t", "tau")):
    k = int(np.argmin(margins))
    return {"min": float(margins[k]), names[0]: float(t[k]), names[1]: float(tau[k]),
            "count": int(margins.size),
            "table": np.column_stack([t, tau, margins])}


def kalman_refutation_profile(plant: LtvSystem, s_values, lag: float = 1.0, eta: float = 0.0):
    """Residuals ``log||Phi(s+lag, s)|| - eta |s|`` at the given ``s`` values (both signs of lag)."""
    s = np.asarray(s_values, dtype=float)
    fw = pair_log_norms(plant, np.column_stack([s + lag, s]))
    bw = pair_log_norms(plant, np.column_stack([s - lag, s]))
    ell = np.maximum(fw.log_norm, bw.log_norm)
    return ell - eta * np.abs(s)


def certify_kalman(plant: LtvSystem, t_grid=None, *, max_lag: float = DEFAULT_MAX_LAG,
                   eta_max: float = DEFAULT_ETA_MAX, refine: bool = True,
                   **kw) -> CertificateVerdict:
    """Nonuniform Kalman property ``||Phi(t, tau)|| <= e^{nu |tau|} alpha(|t - tau|)``.

    This is the ``eta`` stage of the growth fit without the exponential form
    of ``alpha``: the certificate lists ``alpha`` at the sampled lags.
    """
    if t_grid is None:
        t_grid = default_t_grid(plant.domain)
    samples = sample_log_norms(plant, t_grid, max_lag, refine=refine, **kw)
    g = fit_growth_envelope(plant, samples=samples, max_lag=max_lag, eta_max=eta_max,
                            **{k: v for k, v in kw.items() if k in ("trend_tol", "refute_slope")})
    if g.certified:
        nu = g.params.eta
    elif g.details.get("stage") == "lag":
        nu = g.details["eta"]
    else:
        return CertificateVerdict(g.status, "kalman", witness=g.witness, note=g.note,
                                  details=g.details)
    lag = np.round(np.abs(samples.t - samples.tau), 9)
    res = samples.log_norm - nu * np.abs(samples.tau)
    keys = np.unique(lag)
    alpha = [[float(k), float(np.exp(res[lag == k].max()))] for k in keys]
    return CertificateVerdict(CERTIFIED, "kalman", params={"nu": nu, "alpha": alpha},
                              note=f"no |tau| trend at rate {nu:g} on {len(samples)} sampled pairs")


# -- Gramian envelopes --------------------------------------------------------------


def _gramian_eigs(system, kind, t_grid, sigma_grid, **kw):
    """Eigenvalue bounds on valid windows; NaN where the window leaves the domain."""
    ts = np.asarray(t_grid, dtype=float)
    ss = np.asarray(sigma_grid, dtype=float)
    T, S = np.meshgrid(ts, ss, indexing="ij")
    valid = np.zeros(T.shape, dtype=bool)
    for i, j in np.ndindex(T.shape):
        try:
            system.domain.check_span(T[i, j], T[i, j] + S[i, j])
            valid[i, j] = True
        except ValueError:
            pass
    lam_min = np.full(T.shape, np.nan)
    lam_max = np.full(T.shape, np.nan)
    if valid.any():
        G, _ = gramian_windows(system, kind, T[valid], T[valid] + S[valid],
                               on_overflow="inf", **kw)
        finite = np.all(np.isfinite(G), axis=(1, 2))
        ev = np.full((G.shape[0], 2), np.inf)
        if finite.any():
            e = np.linalg.eigvalsh(G[finite])
            ev[finite, 0] = e[:, 0]
            ev[finite, 1] = e[:, -1]
        ev[~finite, 0] = np.nan
        lam_min[valid] = ev[:, 0]
        lam_max[valid] = ev[:, 1]
    return ts, ss, lam_min, lam_max


def certify_gramian_envelope(system: LtvSystem, kind: str, t_grid=None, sigma_grid=None,
                             rate_caps=(DEFAULT_RATE_CAP, DEFAULT_RATE_CAP), *,
                             uniform: bool = False, refine: bool = True,
                             trend_tol: float = TREND_TOL, refute_slope: float = REFUTE_SLOPE,
                             sigma_trend: float = SIGMA_TREND, **kw) -> CertificateVerdict:
    """Certify ``e^{-2 nu0 |t|} g0(sigma) <= lambda(G(t, t+sigma)) <= e^{2 nu1 |t|} g1(sigma)``.

    ``G`` is one of W, K, M, N.  For each sigma the smallest trend-free rates
    are found; a single ``sigma_min`` is the smallest grid value from which
    every larger sigma fits within ``rate_caps``.  Required rates that keep
    growing over the three largest sigmas refute the property for every cap,
    because the definition needs one pair of rates for all large windows.
    ``uniform=True`` fixes both caps at zero.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    prop = f"{kind}-{'uniform' if uniform else 'nonuniform'}"
    caps = (0.0, 0.0) if uniform else tuple(float(c) for c in rate_caps)
    if t_grid is None:
        t_grid = default_t_grid(system.domain)
    if sigma_grid is None:
        sigma_grid = DEFAULT_SIGMAS
    grid = refine_grid(t_grid) if refine else np.asarray(t_grid, dtype=float)
    ts, ss, lmin, lmax = _gramian_eigs(system, kind, grid, sigma_grid, **kw)
    u = np.abs(ts)

    per_sigma = []
    for j, s in enumerate(ss):
        ok = ~np.isnan(lmax[:, j])
        if ok.sum() < MIN_GROUP:
            per_sigma.append(None)
            continue
        lo, hi = lmin[ok, j], lmax[ok, j]
        singular = ~(lo > SINGULAR_RTOL * hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            q0 = np.where(singular, np.inf, -np.log(np.where(singular, 1.0, lo)))
            q1 = np.log(hi)
        # rates act as e^{2 nu |t|}
        g0 = _groups(np.zeros(ok.sum()), 2 * u[ok], q0)
        g1 = _groups(np.zeros(ok.sum()), 2 * u[ok], q1)
        nu0 = _scan_min_rate(g0, 0.0, max(caps[0], 0.0) + DEFAULT_RATE_CAP * 4, trend_tol) \
            if not singular.any() else None
        nu1 = _scan_min_rate(g1, 0.0, max(caps[1], 0.0) + DEFAULT_RATE_CAP * 4, trend_tol)
        per_sigma.append({"sigma": float(s), "idx": np.flatnonzero(ok), "nu0": nu0, "nu1": nu1,
                          "singular": np.flatnonzero(ok)[singular], "g0": g0, "g1": g1,
                          "q0": q0, "q1": q1})

    rows = [p for p in per_sigma if p is not None]
    if not rows:
        return CertificateVerdict(INCONCLUSIVE, prop, note="no valid windows on the grid")
    table = [{"sigma": p["sigma"],
              "nu0_required": _num(p["nu0"]), "nu1_required": _num(p["nu1"])} for p in rows]

    # sigma-trend: required rates growing over the three largest sigmas
    for which in ("nu1", "nu0"):
        req = [p[which] for p in rows[-3:]]
        if len(req) == 3 and all(r is not None for r in req):
            sig = [p["sigma"] for p in rows[-3:]]
            sl = [(req[k + 1] - req[k]) / (sig[k + 1] - sig[k]) for k in range(2)]
            if min(sl) > sigma_trend:
                w = [{"sigma": sig[k], f"{which}_required": req[k]} for k in range(3)]
                w += _gramian_t_witness(ts, rows[-1], which, max(caps[int(which[-1])], 0.0))
                return CertificateVerdict(
                    REFUTED, prop, witness=w,
                    note=(f"required rate {which} grows with sigma ({', '.join(f'{r:g}' for r in req)}"
                          f" at sigma {', '.join(f'{s:g}' for s in sig)}); no fixed rate serves all "
                          "large windows, so the property fails for every rate cap"),
                    details={"per_sigma": table})

    def feasible(p):
        return (p["nu0"] is not None and p["nu1"] is not None
                and p["nu0"] <= caps[0] + 1e-12 and p["nu1"] <= caps[1] + 1e-12)

    flags = [feasible(p) for p in rows]
    start = None
    for k in range(len(rows) - 1, -1, -1):
        if flags[k]:
            start = k
        else:
            break
    if start is None:
        last = rows[-1]
        w, note = [], ""
        if len(last["singular"]):
            k = last["singular"][:3]
            w = [{"t": float(ts[i]), "sigma": last["sigma"], "lambda_min": float(lmin[i, -1]),
                  "lambda_max": float(lmax[i, -1])} for i in k]
            note = "Gramian numerically singular (lambda_min < 1e-14 lambda_max): lower gauge fails"
            if len(w) >= 1:
                return CertificateVerdict(REFUTED, prop, witness=w, note=note,
                                          details={"per_sigma": table})
        for which, cap in (("nu1", caps[1]), ("nu0", caps[0])):
            groups = last["g1"] if which == "nu1" else last["g0"]
            ref = _refutation(groups, cap, refute_slope)
            if ref is not None and (last[which] is None or last[which] > cap):
                _, g, idx, m = ref
                q = last["q1"] if which == "nu1" else last["q0"]
                sub = last["idx"]
                w = [{"t": float(ts[sub[i]]), "sigma": last["sigma"],
                      "excess_over_cap": float(q[i] - 2 * cap * u[sub[i]])}
                     for i in idx]
                return CertificateVerdict(
                    REFUTED, prop, witness=w,
                    note=(f"{'upper' if which == 'nu1' else 'lower'} gauge residual grows in |t| "
                          f"faster than the cap {which} <= {cap:g} allows"),
                    details={"per_sigma": table})
        return CertificateVerdict(INCONCLUSIVE, prop,
                                  note="largest sigma not feasible within the rate caps, "
                                       "no monotone witness", details={"per_sigma": table})

    used = rows[start:]
    nu0 = max(p["nu0"] for p in used)
    nu1 = max(p["nu1"] for p in used)
    gauge0, gauge1, mins = [], [], []
    for p in used:
        idx = p["idx"]
        uu = u[idx]
        lo_w = lmin[idx, ss.tolist().index(p["sigma"])] * np.exp(2 * nu0 * uu)
        hi_w = lmax[idx, ss.tolist().index(p["sigma"])] * np.exp(-2 * nu1 * uu)
        g0, g1 = float(lo_w.min()), float(hi_w.max())
        gauge0.append(g0)
        gauge1.append(g1)
        mins.append(min(float(np.min(np.log(lo_w / g0))), float(np.min(np.log(g1 / hi_w)))))
    env = GramianEnvelope(kind, nu0, nu1, tuple(p["sigma"] for p in used), tuple(gauge0),
                          tuple(gauge1), used[0]["sigma"])
    note = f"{kind} envelope on {len(ts)} t-points and sigma >= {used[0]['sigma']:g}"
    if uniform:
        note += " (uniform: nu0 = nu1 = 0)"
    return CertificateVerdict(CERTIFIED, prop, params=env, note=note,
                              margins={"min": float(min(mins)), "count": int(sum(len(p["idx"]) for p in used))},
                              details={"per_sigma": table})


def _num(x):
    return None if x is None else float(x)


def _gramian_t_witness(ts, row, which, cap):
    q = row["q1"] if which == "nu1" else row["q0"]
    idx = row["idx"]
    u = np.abs(ts[idx])
    order = np.argsort(u)
    pick = order[np.linspace(len(order) // 3, len(order) - 1, 3).astype(int)]
    return [{"t": float(ts[idx[i]]), "sigma": row["sigma"],
             "excess_over_cap": float(q[i] - 2 * cap * u[i])} for i in pick]


# -- NUES ---------------------------------------------------------------------------


def certify_nues(plant: LtvSystem, t_grid=None, direction: str = "forward",
                 target: NuesEnvelope | None = None, *, max_lag: float | None = DEFAULT_MAX_LAG,
                 samples: LogNormSamples | None = None, refine: bool = True,
                 beta_max: float = DEFAULT_BETA_MAX, delta_max: float = DEFAULT_DELTA_MAX,
                 margin_tol: float = 0.0, trend_tol: float = TREND_TOL,
                 refute_slope: float = REFUTE_SLOPE, **kw) -> CertificateVerdict:
    """Certify or fit ``||Phi(t, s)|| <= M e^{delta |s|} e^{-+beta (t - s)}``.

    Forward pairs have ``t >= s``, backward pairs ``t <= s``.  With a
    ``target`` the margins are checked as given; otherwise ``beta`` is the
    largest decay rate with no growth along ``|t - s|``, ``delta`` the
    smallest rate with no growth along ``|s|`` and ``M = max(1, e^{max residual})``.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    prop = f"nues-{direction}"
    if samples is None:
        if t_grid is None:
            t_grid = default_t_grid(plant.domain)
        samples = sample_log_norms(plant, t_grid, max_lag, direction=direction, refine=refine, **kw)
    sign = 1.0 if direction == "forward" else -1.0
    d = sign * (samples.t - samples.tau)
    keep = d >= 0
    samples = samples.select(keep)
    d = d[keep]
    u = np.abs(samples.tau)
    ell = samples.log_norm

    overflow = ~np.isfinite(ell) & (ell > 0)
    if overflow.any():
        idx = np.flatnonzero(overflow)
        idx = idx[np.argsort(d[idx])][:3]
        return CertificateVerdict(REFUTED, prop,
                                  witness=_witness_points(samples, idx, ell),
                                  note="transition overflow (norm > 1e300): unbounded growth")

    if target is not None:
        if target.direction != direction:
            raise ValueError("target direction does not match")
        margins = target.log_bound(samples.t, samples.tau) - ell
        margins = np.where(np.isnan(margins), -np.inf, margins)
        bad = np.flatnonzero(margins < -margin_tol)
        summary = _margin_summary(samples.t, samples.tau, margins, ("t", "s"))
        if bad.size == 0:
            return CertificateVerdict(CERTIFIED, prop, params=target,
                                      note=f"target envelope holds on {len(samples)} pairs",
                                      margins=summary)
        worst = bad[np.argsort(margins[bad])[::-1]]
        if worst.size >= 3:
            pick = worst[np.linspace(0, worst.size - 1, 3).astype(int)]
            return CertificateVerdict(
                REFUTED, prop, params=target,
                witness=_witness_points(samples, pick, -margins),
                note=f"target envelope violated at {bad.size} of {len(samples)} pairs",
                margins=summary)
        return CertificateVerdict(INCONCLUSIVE, prop, params=target,
                                  witness=_witness_points(samples, worst, -margins),
                                  note="isolated target violation (fewer than 3 points)",
                                  margins=summary)

    # beta: per start time, ell + beta d must not grow along d
    s_key = np.round(samples.tau, 9)
    g_beta = _groups(s_key, d, ell, min_points=3)
    # start times near the grid end only see short lags, where growth that
    # e^{delta |s|} absorbs cannot be told from missing decay
    if g_beta:
        longest = max(g.span for g in g_beta)
        g_beta = [g for g in g_beta if g.span >= 0.9 * longest]
    # a bump at moderate lag is allowed as long as the far end stops rising
    for g in g_beta:
        g.tail = True
    rho = _scan_min_rate(g_beta, -beta_max, beta_max, trend_tol)
    if rho is None or -rho <= 0:
        # no decay: look for monotone growth along d
        probe = 0.0 if rho is None else rho
        ref = _refutation(g_beta, min(probe, 0.0), refute_slope)
        if ref is not None:
            _, g, idx, m = ref
            return CertificateVerdict(
                REFUTED, prop, witness=_witness_points(samples, idx, ell),
                note="transition norm grows along t - s at fixed s: no exponential decay")
        return CertificateVerdict(INCONCLUSIVE, prop,
                                  note="no positive decay rate fits the grid")
    beta = -rho
    res = ell + beta * d
    keys = np.unique(s_key)
    per_s = np.array([res[s_key == k].max() for k in keys])
    g_delta = _groups(np.zeros(keys.size), np.abs(keys.astype(float)), per_s)
    delta = _scan_min_rate(g_delta, 0.0, delta_max, trend_tol)
    if delta is None:
        ref = _refutation(g_delta, delta_max, refute_slope)
        status = REFUTED if ref is not None else INCONCLUSIVE
        return CertificateVerdict(status, prop,
                                  note=f"residual growth in |s| exceeds delta_max={delta_max:g}")
    logM = max(0.0, float(np.max(res - delta * u)))
    env = NuesEnvelope(math.exp(logM), beta, delta, direction)
    margins = env.log_bound(samples.t, samples.tau) - ell
    return CertificateVerdict(CERTIFIED, prop, params=env,
                              note=f"fitted on {len(samples)} pairs",
                              margins=_margin_summary(samples.t, samples.tau, margins, ("t", "s")))


def continuum_inflation(plant: LtvSystem, t_grid, env: NuesEnvelope, per_leg: int = 9) -> float:
    """Log factor extending a forward NUES envelope from grid pairs to all pairs.

    For ``t'`` in ``[t_k, t_k+1]`` and ``s'`` in ``[s_j, s_j+1]``,
    ``Phi(t', s') = Phi(t', t_k) Phi(t_k, s_j) Phi(s_j, s')`` and each outer
    factor is bounded by the integrated logarithmic norm of ``A`` (forward)
    or ``-A`` (backward) over one leg.  The logarithmic norms are sampled at
    ``per_leg`` points per leg, and the envelope itself moves by at most
    ``(beta + delta) h``.
    """
    if env.direction != "forward":
        raise ValueError("only forward envelopes are extended")
    g = np.unique(np.asarray(t_grid, dtype=float))
    if g.size < 2:
        return 0.0
    h = np.diff(g)
    w = np.linspace(0.0, 1.0, per_leg)
    pts = (g[:-1, None] + h[:, None] * w[None, :]).ravel()
    A = plant.A.evaluate_many(pts)
    sym = 0.5 * (A + np.swapaxes(A, 1, 2))
    ev = np.linalg.eigvalsh(sym).reshape(h.size, per_leg, -1)
    mu_fw = np.maximum(ev[..., -1].max(axis=1), 0.0)
    mu_bw = np.maximum(-ev[..., 0].min(axis=1), 0.0)
    return float(np.max(h * mu_fw) + np.max(h * mu_bw) + (env.beta + env.delta) * h.max())


def extend_to_continuum(plant: LtvSystem, t_grid, env: NuesEnvelope, **kw) -> NuesEnvelope:
    """``env`` with ``M`` multiplied by ``exp(continuum_inflation(...))``."""
    f = continuum_inflation(plant, t_grid, env, **kw)
    return NuesEnvelope(env.M * math.exp(f), env.beta, env.delta, env.direction)


# -- composite checks -------------------------------------------------------------------


TRIADS = {
    "controllability": ("W", "K", "growth"),
    "observability": ("M", "N", "growth"),
}


def verify_triad(system: LtvSystem, which_two: Sequence[str], t_grid=None, sigma_grid=None,
                 *, rate_caps=(DEFAULT_RATE_CAP, DEFAULT_RATE_CAP), max_lag=DEFAULT_MAX_LAG,
                 **kw) -> CertificateVerdict:
    """Given two properties of a triad, certify the third on the same grids.

    Triads are ``{W, K, growth}`` and ``{M, N, growth}``.  The third
    property's rates are compared with a bound built from the inputs: a
    congruence by ``Phi`` over one window moves Gramian rates by at most
    ``eta``, and ``eta`` is at most ``nu0 + nu1-bar`` (or the mirrored sum).
    """
    given = tuple(which_two)
    triad = next((v for v in TRIADS.values() if set(given) <= set(v)), None)
    if triad is None or len(set(given)) != 2:
        raise ValueError(f"{given} is not a pair from a triad {list(TRIADS.values())}")
    third = next(p for p in triad if p not in given)

    def run(p):
        if p == "growth":
            return fit_growth_envelope(system, t_grid, max_lag=max_lag, **kw)
        return certify_gramian_envelope(system, p, t_grid, sigma_grid, rate_caps, **kw)

    inputs = {p: run(p) for p in given}
    details = {"inputs": {p: v.status for p, v in inputs.items()}}
    failed = [p for p, v in inputs.items() if not v.certified]
    if failed:
        return CertificateVerdict(INCONCLUSIVE, f"triad:{third}",
                                  note=f"triad not applicable: {', '.join(failed)} not certified",
                                  details=details)
    out = run(third)
    rates = {p: v.params for p, v in inputs.items()}
    bound = None
    if out.certified:
        if third == "growth":
            g1, g2 = [rates[p] for p in given]
            bound = max(g1.nu0 + g2.nu1, g2.nu0 + g1.nu1)
            got = out.params.eta
        else:
            gram = next(rates[p] for p in given if p != "growth")
            eta = rates["growth"].eta
            bound = max(gram.nu0, gram.nu1) + eta
            got = max(out.params.nu0, out.params.nu1)
        details.update({"third_rate": got, "rate_bound": bound, "within_bound": got <= bound + 1e-9})
    out.property = f"triad:{third}"
    out.details = {**out.details, **details}
    out.note = (out.note + f"; rate bound {bound:g}") if bound is not None else out.note
    return out


@dataclass
class StabilityEquivalenceReport:
    forward: CertificateVerdict
    adjoint: CertificateVerdict
    dual: CertificateVerdict
    adjoint_sound: CertificateVerdict
    dual_sound: CertificateVerdict
    mapping: str

    @property
    def passed(self) -> bool:
        return self.forward.certified and self.adjoint.certified and self.dual.certified

    def margins(self) -> dict:
        return {k: getattr(self, k).margins.get("min") for k in
                ("forward", "adjoint", "dual", "adjoint_sound", "dual_sound")}

    def to_dict(self) -> dict:
        return {"passed": self.passed, "mapping": self.mapping,
                "forward": self.forward.to_dict(), "adjoint": self.adjoint.to_dict(),
                "dual": self.dual.to_dict(), "adjoint_sound": self.adjoint_sound.to_dict(),
                "dual_sound": self.dual_sound.to_dict()}


def check_stability_equivalence(plant: LtvSystem, t_grid=None, *,
                                forward: CertificateVerdict | None = None,
                                max_lag: float | None = DEFAULT_MAX_LAG, margin_tol: float = 1e-6,
                                refine: bool = True, **kw) -> StabilityEquivalenceReport:
    """Forward NUES of ``x' = V x`` against backward NUES of the adjoint and forward NUES of the dual.

    The primary mapping carries ``(M, beta, delta)`` to ``(M, beta + delta, delta)``.
    The triangle inequality ``|t| <= |s| + |t - s|`` only supports
    ``beta - delta``, so that mapping is checked too; the two agree when
    ``delta = 0``.
    """
    if t_grid is None:
        t_grid = default_t_grid(plant.domain)
    t_grid = np.asarray(t_grid, dtype=float)
    if forward is None:
        forward = certify_nues(plant, t_grid, "forward", max_lag=max_lag, refine=refine, **kw)
    if not forward.certified:
        raise ValueError(f"forward NUES not certified: {forward.note}")
    env = forward.params
    adj, dual = plant_adjoint(plant), plant_dual(plant)
    adj_samples = sample_log_norms(adj, t_grid, max_lag, direction="backward", refine=refine, **kw)
    dual_samples = sample_log_norms(dual, np.sort(-t_grid), max_lag, direction="forward",
                                    refine=refine, **kw)

    def check(system, samples, beta, direction):
        if beta <= 0:
            return CertificateVerdict(INCONCLUSIVE, f"nues-{direction}",
                                      note=f"mapped rate {beta:g} is not positive")
        target = NuesEnvelope(env.M, beta, env.delta, direction)
        return certify_nues(system, direction=direction, target=target, samples=samples,
                            margin_tol=margin_tol)

    b_stated = env.beta + env.delta
    b_sound = env.beta - env.delta
    return StabilityEquivalenceReport(
        forward,
        check(adj, adj_samples, b_stated, "backward"),
        check(dual, dual_samples, b_stated, "forward"),
        check(adj, adj_samples, b_sound, "backward"),
        check(dual, dual_samples, b_sound, "forward"),
        "(M, beta, delta) -> (M, beta + delta, delta)",
    )
