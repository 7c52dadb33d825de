"""State-transition matrices of ``x' = A(t) x``.

``transition(system, t, s)`` integrates ``X' = A X`` from ``X(s) = I`` to ``t``
(backward in time when ``t < s``; matrices are never inverted).  The batched
helpers propagate many starting times at once, and :class:`PropagationCache`
stores transitions between adjacent anchors so that ``Phi(a_i, a_j)`` is a
product of short legs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ode
from .system import LtvSystem

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


def _right_rhs(system: LtvSystem):
    A = system.A

    def f(t, X):
        return A.evaluate_many(t) @ X

    return f


def _left_rhs(system: LtvSystem):
    A = system.A

    def f(t, X):
        return -(X @ A.evaluate_many(t))

    return f


def propagate(system: LtvSystem, starts, outputs, *, side: str = "right",
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
              allow_divergence: bool = False) -> ode.BatchResult:
    """Batched transitions from several starting times.

    ``side="right"`` returns ``Phi(tau, s)`` for every output ``tau`` of the row
    starting at ``s``; ``side="left"`` returns ``Phi(s, tau)`` by integrating
    ``X' = -X A(tau)`` in ``tau``.
    """
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    outputs = np.asarray(outputs, dtype=float).reshape(starts.size, -1)
    for s, row in zip(starts, outputs):
        system.domain.check_span(float(s), float(row[-1]))
        system.domain.check_span(float(s), float(row[0]))
    n = system.n
    X0 = np.broadcast_to(np.eye(n), (starts.size, n, n)).copy()
    rhs = _right_rhs(system) if side == "right" else _left_rhs(system)
    res = ode.integrate(rhs, starts, X0, outputs, rtol=rtol, atol=atol)
    if res.diverged.any() and not allow_divergence:
        r = int(np.flatnonzero(res.diverged)[0])
        raise ode.Divergence(float(res.time_reached[r]))
    return res


@dataclass(frozen=True)
class TransitionQuery:
    system: LtvSystem
    to: float
    start: float
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        self.system.domain.check([self.to, self.start])


def transition(system: LtvSystem | TransitionQuery, t: float | None = None, s: float | None = None,
               *, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Transition matrix ``Phi(t, s)``; ``Phi(t, t)`` is the identity without integration."""
    if isinstance(system, TransitionQuery):
        q = system
        system, t, s, rtol, atol = q.system, q.to, q.start, q.rtol, q.atol
    t, s = float(t), float(s)
    system.domain.check_span(s, t)
    if t == s:
        return np.eye(system.n)
    res = propagate(system, [s], [[t]], rtol=rtol, atol=atol)
    return res.values[0, 0]


def transition_norm(system: LtvSystem | TransitionQuery, t: float | None = None,
                    s: float | None = None, **kw) -> float:
    """Spectral norm (largest singular value) of ``Phi(t, s)``."""
    return float(np.linalg.norm(transition(system, t, s, **kw), 2))


def transitions(system: LtvSystem, pairs, *, rtol: float = DEFAULT_RTOL,
                atol: float = DEFAULT_ATOL) -> np.ndarray:
    """``Phi(t_k, s_k)`` for a list of ``(t, s)`` pairs, integrated as one batch."""
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    out = np.broadcast_to(np.eye(system.n), (len(pairs), system.n, system.n)).copy()
    moving = pairs[:, 0] != pairs[:, 1]
    if moving.any():
        res = propagate(system, pairs[moving, 1], pairs[moving, 0][:, None], rtol=rtol, atol=atol)
        out[moving] = res.values[:, 0]
    return out


def spectral_norms(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-1] == 1 and mats.shape[-2] == 1:
        return np.abs(mats[..., 0, 0])
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


class PropagationCache:
    """Transitions between adjacent anchors, composed on demand.

    ``forward[k] = Phi(a[k+1], a[k])`` and ``backward[k] = Phi(a[k], a[k+1])``
    are integrated independently (backward legs in reversed time).
    """

    def __init__(self, anchors, forward, backward, rtol, atol):
        self.anchors = np.asarray(anchors, dtype=float)
        self.forward = forward
        self.backward = backward
        self.rtol = rtol
        self.atol = atol
        self._index = {float(a): i for i, a in enumerate(self.anchors)}

    def index(self, t: float) -> int:
        try:
            return self._index[float(t)]
        except KeyError:
            raise KeyError(f"{t!r} is not an anchor") from None

    def between(self, i: int, j: int) -> np.ndarray:
        """``Phi(a[i], a[j])`` as a product of adjacent legs."""
        n = self.forward.shape[-1] if len(self.forward) else 1
        out = np.eye(n)
        if i > j:
            for k in range(j, i):
                out = self.forward[k] @ out
        elif i < j:
            for k in range(j - 1, i - 1, -1):
                out = self.backward[k] @ out
        return out

    def __call__(self, t: float, s: float) -> np.ndarray:
        return self.between(self.index(t), self.index(s))

    def log_norm_table(self, max_hops: int | None = None):
        """Log spectral norms of ``Phi(a[i], a[j])`` for ``|i - j| <= max_hops``.

        Returns ``(i, j, log_norm)`` arrays.  Products are renormalised after
        every hop so very large or very small transitions neither overflow nor
        underflow.
        """
        K = len(self.anchors)
        H = K - 1 if max_hops is None else min(max_hops, K - 1)
        n = self.forward.shape[-1] if K > 1 else 1
        ii, jj, vals = [np.arange(K)], [np.arange(K)], [np.zeros(K)]
        for legs, sign in ((self.forward, 1), (self.backward, -1)):
            if K < 2:
                break
            # walk away from every start j simultaneously
            P = np.broadcast_to(np.eye(n), (K, n, n)).copy()
            logscale = np.zeros(K)
            starts = np.arange(K)
            for h in range(1, H + 1):
                tgt = starts + sign * h
                ok = (tgt >= 0) & (tgt < K)
                if not ok.any():
                    break
                js = starts[ok]
                leg_idx = (js + h - 1) if sign > 0 else (js - h)
                P[ok] = legs[leg_idx] @ P[ok]
                with np.errstate(divide="ignore"):
                    mx = np.max(np.abs(P[ok]), axis=(1, 2))
                    ln = np.log(mx)
                bad = ~np.isfinite(ln) | (mx == 0)
                safe = np.where(bad, 1.0, mx)
                P[ok] = P[ok] / safe[:, None, None]
                logscale[ok] += np.where(bad, 0.0, ln)
                with np.errstate(divide="ignore"):
                    val = np.log(spectral_norms(P[ok])) + logscale[ok]
                val = np.where(bad, np.where(mx == 0, -np.inf, np.inf), val)
                ii.append(tgt[ok])
                jj.append(js)
                vals.append(val)
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(vals)


def transition_grid(system: LtvSystem, anchors, *, rtol: float = DEFAULT_RTOL,
                    atol: float = DEFAULT_ATOL) -> PropagationCache:
    """Integrate the legs between consecutive anchors (sorted, inside the domain)."""
    anchors = np.asarray(anchors, dtype=float)
    if anchors.ndim != 1 or anchors.size == 0:
        raise ValueError("anchors must be a non-empty 1-d list")
    if np.any(np.diff(anchors) <= 0):
        raise ValueError("anchors must be strictly increasing")
    system.domain.check(anchors)
    n = system.n
    K = anchors.size
    if K == 1:
        empty = np.empty((0, n, n))
        return PropagationCache(anchors, empty, empty, rtol, atol)
    lo, hi = anchors[:-1], anchors[1:]
    starts = np.concatenate([lo, hi])
    ends = np.concatenate([hi, lo])
    res = propagate(system, starts, ends[:, None], rtol=rtol, atol=atol)
    legs = res.values[:, 0]
    return PropagationCache(anchors, legs[:K - 1], legs[K - 1:], rtol, atol)
