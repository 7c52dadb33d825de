"""Gramian-type matrices W, K, M and N by composite Gauss-Legendre quadrature.

    W(a, b)   = int_a^b Phi(a, s) B B^T Phi(a, s)^T ds
    K(t, t+s) = Phi(t+s, t) W(t, t+s) Phi(t+s, t)^T
    M(a, b)   = int_a^b Phi(s, a)^T C^T C Phi(s, a) ds
    N(t, t+s) = Phi(t, t+s)^T M(t, t+s) Phi(t, t+s)

Transition matrices at the quadrature nodes come from a single integration per
window that stops exactly at every node.  Many windows are handled as one
batch, which is what the certifiers use to tabulate eigenvalue bounds over a
``t x sigma`` grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ode
from .propagator import DEFAULT_ATOL, DEFAULT_RTOL, propagate, transitions
from .system import LtvSystem

NODES_PER_PANEL = 16
MAX_PANELS = 2 ** 10
QUAD_RTOL = 1e-9
SYMMETRY_TOL = 1e-9
PSD_SLACK = 1e-10

KINDS = ("W", "K", "M", "N")

_GL_X, _GL_W = np.polynomial.legendre.leggauss(NODES_PER_PANEL)


class AsymmetricMatrixError(ValueError):
    pass


class QuadratureError(RuntimeError):
    """Panel doubling hit the cap without meeting the tolerance."""


@dataclass(frozen=True)
class GramianResult:
    matrix: np.ndarray
    lambda_min: float
    lambda_max: float
    quad_error: float
    kind: str
    window: tuple

    @property
    def psd(self) -> bool:
        return self.lambda_min >= -PSD_SLACK * max(self.lambda_max, 0.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": [float(w) for w in self.window],
            "matrix": self.matrix.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "quad_error": self.quad_error,
        }


def eig_bounds(matrix) -> tuple[float, float]:
    """Extreme eigenvalues of a symmetric matrix."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise AsymmetricMatrixError(f"matrix is not square: {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise AsymmetricMatrixError("matrix is not symmetric within 1e-9")
    ev = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(ev[0]), float(ev[-1])


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _nodes(a: np.ndarray, b: np.ndarray, panels: int):
    """Gauss-Legendre nodes and weights on ``panels`` equal panels of each ``[a, b]``."""
    edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, panels + 1)[None, :]
    half = 0.5 * np.diff(edges, axis=1)                       # (R, P)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    nodes = mid[:, :, None] + half[:, :, None] * _GL_X[None, None, :]
    weights = half[:, :, None] * _GL_W[None, None, :]
    R = a.size
    return nodes.reshape(R, -1), weights.reshape(R, -1)


def _integrate_level(system: LtvSystem, kind: str, start, a, b, panels, rtol, atol,
                     allow_divergence=False):
    """One quadrature level for rows of windows ``[a, b]``.

    ``kind`` selects the integrand; rows whose integration starts at ``b``
    visit the nodes in reverse order.
    """
    nodes, weights = _nodes(a, b, panels)
    from_right = start == b
    order = np.where(from_right[:, None], nodes[:, ::-1], nodes)
    side = "left" if kind in ("W", "K") else "right"
    res = propagate(system, start, order, side=side, rtol=rtol, atol=atol,
                    allow_divergence=allow_divergence)
    X = res.values                                             # (R, Q, n, n)
    X = np.where(from_right[:, None, None, None], X[:, ::-1], X)
    flat_t = nodes.reshape(-1)
    R, Q = nodes.shape
    with np.errstate(over="ignore", invalid="ignore"):
        if kind in ("W", "K"):
            Bv = system.B.evaluate_many(flat_t).reshape(R, Q, system.n, -1)
            Y = X @ Bv
            integrand = Y @ np.swapaxes(Y, -1, -2)
        else:
            Cv = system.C.evaluate_many(flat_t).reshape(R, Q, -1, system.n)
            Y = Cv @ X
            integrand = np.swapaxes(Y, -1, -2) @ Y
        G = symmetrize(np.einsum("rq,rqij->rij", weights, integrand))
    G[~np.all(np.isfinite(G), axis=(1, 2))] = np.inf
    return G


def _adaptive(system, kind, start, a, b, rtol, atol, quad_rtol, max_panels, on_overflow="raise"):
    """Panel doubling per row until successive levels agree.

    Rows whose integrand overflows raise :class:`ode.Divergence`, or become
    ``inf`` matrices with ``on_overflow="inf"``.
    """
    soft = on_overflow == "inf"
    R = a.size
    n = system.n
    out = np.zeros((R, n, n))
    err = np.zeros(R)
    used = np.zeros(R, dtype=int)
    active = np.arange(R)
    prev = _integrate_level(system, kind, start, a, b, 1, rtol, atol, soft)
    panels = 1
    while active.size:
        panels *= 2
        cur = _integrate_level(system, kind, start[active], a[active], b[active], panels, rtol,
                               atol, soft)
        blown = ~np.all(np.isfinite(cur), axis=(1, 2))
        if blown.any():
            if not soft:
                raise ode.Divergence(float(b[active[np.flatnonzero(blown)[0]]]))
            out[active[blown]] = np.inf
            err[active[blown]] = np.inf
            cur, active, prev = cur[~blown], active[~blown], prev
            if not active.size:
                break
        with np.errstate(invalid="ignore"):
            diff = np.linalg.norm((cur - prev[active]).reshape(len(active), -1), axis=1)
        size = np.linalg.norm(cur.reshape(len(active), -1), axis=1)
        ok = diff <= quad_rtol * size
        done = active[ok]
        out[done] = cur[ok]
        err[done] = diff[ok]
        used[done] = panels
        if panels >= max_panels and not ok.all():
            r = active[np.flatnonzero(~ok)[0]]
            raise QuadratureError(
                f"{kind} Gramian on [{a[r]:g}, {b[r]:g}] not converged with {panels} panels")
        prev = np.zeros_like(prev)
        prev[active[~ok]] = cur[~ok]
        active = active[~ok]
    return out, err, used


@dataclass
class GramianTable:
    """Gramians of one kind over a ``t x sigma`` grid."""

    kind: str
    t: np.ndarray
    sigma: np.ndarray
    matrices: np.ndarray      # (T, S, n, n)
    lambda_min: np.ndarray    # (T, S)
    lambda_max: np.ndarray
    quad_error: np.ndarray
    extra: dict = field(default_factory=dict)

    def result(self, i: int, j: int) -> GramianResult:
        t, s = float(self.t[i]), float(self.sigma[j])
        return GramianResult(self.matrices[i, j], float(self.lambda_min[i, j]),
                             float(self.lambda_max[i, j]), float(self.quad_error[i, j]),
                             self.kind, (t, t + s))


def gramian_windows(system: LtvSystem, kind: str, t0, tf, *, method: str = "congruence",
                    rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                    quad_rtol: float = QUAD_RTOL, max_panels: int = MAX_PANELS,
                    on_overflow: str = "raise"):
    """Gramians for arrays of windows ``[t0, tf]``; returns ``(matrices, quad_errors)``.

    For K and N, ``method="congruence"`` transforms W or M by a separately
    integrated transition matrix, ``method="definition"`` integrates the
    defining integral directly.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown Gramian kind {kind!r}")
    system.require("B" if kind in ("W", "K") else "C")
    a = np.atleast_1d(np.asarray(t0, dtype=float))
    b = np.atleast_1d(np.asarray(tf, dtype=float))
    if np.any(b <= a):
        raise ValueError("Gramian windows need t0 < tf")
    for lo, hi in zip(a, b):
        system.domain.check_span(float(lo), float(hi))
    n = system.n
    # successive levels differ by the integration error, so the level test
    # cannot be tighter than the ODE tolerance
    quad_rtol = max(quad_rtol, 10 * rtol)
    if (kind in ("W", "K") and _is_zero(system.B)) or (kind in ("M", "N") and _is_zero(system.C)):
        return np.zeros((a.size, n, n)), np.zeros(a.size)

    if method == "definition" and kind in ("K", "N"):
        return _adaptive(system, kind, b.copy(), a, b, rtol, atol, quad_rtol, max_panels,
                         on_overflow)[:2]
    base = "W" if kind in ("W", "K") else "M"
    G, err, _ = _adaptive(system, base, a.copy(), a, b, rtol, atol, quad_rtol, max_panels,
                          on_overflow)
    if kind == base:
        return G, err
    if kind == "K":
        P = _transitions(system, np.column_stack([b, a]), rtol, atol, on_overflow)
        with np.errstate(over="ignore", invalid="ignore"):
            out = P @ G @ np.swapaxes(P, -1, -2)
    else:
        P = _transitions(system, np.column_stack([a, b]), rtol, atol, on_overflow)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.swapaxes(P, -1, -2) @ G @ P
    with np.errstate(over="ignore", invalid="ignore"):
        scale = np.linalg.norm(P.reshape(len(P), -1), 2, axis=1) ** 2
        out = symmetrize(out)
    blown = ~np.all(np.isfinite(out), axis=(1, 2))
    out[blown] = np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        err = np.where(blown, np.inf, err * scale)
    return out, err


def _transitions(system, pairs, rtol, atol, on_overflow):
    if on_overflow != "inf":
        return transitions(system, pairs, rtol=rtol, atol=atol)
    res = propagate(system, pairs[:, 1], pairs[:, 0][:, None], rtol=rtol, atol=atol,
                    allow_divergence=True)
    return res.values[:, 0]


def _is_zero(mat) -> bool:
    return hasattr(mat, "is_zero") and mat.is_zero()


def _single(system, kind, t0, tf, **kw) -> GramianResult:
    G, err = gramian_windows(system, kind, [t0], [tf], **kw)
    lo, hi = eig_bounds(G[0])
    return GramianResult(G[0], lo, hi, float(err[0]), kind, (float(t0), float(tf)))


def controllability_gramian(system: LtvSystem, a: float, b: float, **kw) -> GramianResult:
    return _single(system, "W", a, b, **kw)


def k_matrix(system: LtvSystem, t: float, sigma: float, **kw) -> GramianResult:
    _check_sigma(sigma)
    return _single(system, "K", t, t + sigma, **kw)


def observability_gramian(system: LtvSystem, t0: float, tf: float, **kw) -> GramianResult:
    return _single(system, "M", t0, tf, **kw)


def n_matrix(system: LtvSystem, t: float, sigma: float, **kw) -> GramianResult:
    _check_sigma(sigma)
    return _single(system, "N", t, t + sigma, **kw)


def gramian(system: LtvSystem, kind: str, t: float, sigma: float, **kw) -> GramianResult:
    """Any of the four kinds on the window ``[t, t + sigma]``."""
    _check_sigma(sigma)
    return _single(system, kind, t, t + sigma, **kw)


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")


def gramian_table(system: LtvSystem, kind: str, t_grid, sigma_grid, **kw) -> GramianTable:
    """Tabulate a Gramian kind over every window ``[t, t + sigma]`` of the grids."""
    ts = np.asarray(t_grid, dtype=float)
    ss = np.asarray(sigma_grid, dtype=float)
    if np.any(ss <= 0):
        raise ValueError("sigma grid must be positive")
    T, S = np.meshgrid(ts, ss, indexing="ij")
    G, err = gramian_windows(system, kind, T.ravel(), (T + S).ravel(), **kw)
    ev = np.linalg.eigvalsh(G)
    shape = T.shape
    n = system.n
    return GramianTable(kind, ts, ss, G.reshape(shape + (n, n)), ev[:, 0].reshape(shape),
                        ev[:, -1].reshape(shape), err.reshape(shape))
