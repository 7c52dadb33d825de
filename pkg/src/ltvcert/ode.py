"""Batched explicit Dormand-Prince 5(4) integrator with PI step control.

Many independent initial value problems ``y' = f(t, y)`` are advanced
together: every row keeps its own time, step size and output schedule, and
right-hand sides are evaluated once per stage for all active rows.  Rows may
run forward or backward in time (the step is simply negative).

Outputs are hit exactly by shortening the step that would overshoot them, so
no interpolation error enters the results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Dormand & Prince (1980), also used by ode45 / RK45.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_BHAT = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _BHAT

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
# PI controller exponents (Hairer, Norsett & Wanner II, IV.2)
ALPHA = 0.7 / 5
BETA = 0.4 / 5

DIVERGENCE_LIMIT = 1e300


class PropagationError(RuntimeError):
    """Integration could not be completed."""


class StepSizeUnderflow(PropagationError):
    def __init__(self, time_reached: float):
        super().__init__(f"step size underflow at t={time_reached!r} (stiff or singular coefficients)")
        self.time_reached = time_reached


class Divergence(PropagationError):
    def __init__(self, time_reached: float):
        super().__init__(f"solution norm exceeded {DIVERGENCE_LIMIT:g} at t={time_reached!r}")
        self.time_reached = time_reached


@dataclass
class BatchResult:
    values: np.ndarray        # (N, K, *shape); inf after divergence
    diverged: np.ndarray      # (N,) bool
    time_reached: np.ndarray  # (N,) last time reached (end time if completed)
    steps: int                # iterations of the batched loop
    rhs_evals: int


def integrate(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    t0,
    y0,
    t_out,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    post_step: Callable[[np.ndarray], np.ndarray] | None = None,
    max_steps: int = 2_000_000,
) -> BatchResult:
    """Integrate a batch of ODEs.

    Parameters
    ----------
    f : callable
        ``f(t, y)`` with ``t`` of shape ``(M,)`` and ``y`` of shape ``(M, *shape)``;
        returns the derivative with the shape of ``y``.
    t0 : array_like, shape (N,)
        Initial times.
    y0 : array_like, shape (N, *shape)
        Initial states.
    t_out : array_like, shape (N, K)
        Output times per row, monotone away from ``t0`` (either direction).
    post_step : callable, optional
        Applied to accepted states (e.g. symmetrisation); disables FSAL reuse.

    Returns
    -------
    BatchResult
    """
    t0 = np.atleast_1d(np.asarray(t0, dtype=float))
    y0 = np.asarray(y0, dtype=float)
    N = t0.size
    shape = y0.shape[1:]
    D = int(np.prod(shape)) if shape else 1
    t_out = np.asarray(t_out, dtype=float).reshape(N, -1)
    K = t_out.shape[1]

    direction = np.sign(t_out[:, -1] - t0)
    gaps = np.diff(np.concatenate([t0[:, None], t_out], axis=1), axis=1)
    if np.any(gaps * direction[:, None] < 0):
        raise ValueError("output times must be monotone away from t0")

    y = y0.reshape(N, D).copy()
    t = t0.copy()
    out = np.empty((N, K, D))
    kidx = np.zeros(N, dtype=int)
    done = np.zeros(N, dtype=bool)
    diverged = np.zeros(N, dtype=bool)

    # error weights: each column of a matrix state is one solution vector, and
    # the absolute floor shrinks with the column size so decaying solutions keep
    # their relative accuracy
    if len(shape) >= 2:

        def colscale(m):
            v = m.reshape((len(m),) + shape)
            c = np.max(v, axis=-2, keepdims=True)
            return np.broadcast_to(c, v.shape).reshape(len(m), D)
    else:
        def colscale(m):
            return np.broadcast_to(np.max(m, axis=1, keepdims=True), m.shape)
    rel_floor = 1e-3

    def fflat(tt, yy):
        return np.asarray(f(tt, yy.reshape((len(tt),) + shape)), dtype=float).reshape(len(tt), D)

    # record outputs coinciding with t0
    _flush(t, y, t_out, kidx, out, done, K)
    if done.all():
        return BatchResult(out.reshape((N, K) + shape), diverged, t.copy(), 0, 0)

    evals = 0
    k1 = np.zeros((N, D))
    k1_ok = np.zeros(N, dtype=bool)
    act = np.flatnonzero(~done)
    k1[act] = fflat(t[act], y[act])
    k1_ok[act] = True
    evals += 1

    # initial step from the scaled derivative size
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((k1 / scale) ** 2, axis=1))
    with np.errstate(over="ignore"):
        h_abs = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    span = np.abs(t_out[:, -1] - t0)
    span = np.maximum(span, 1e-12)
    h_abs = np.minimum(h_abs, span)
    h_abs = np.maximum(h_abs, 1e-10 * np.maximum(1.0, np.abs(t0)))
    err_prev = np.ones(N)

    steps = 0
    while True:
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        steps += 1
        if steps > max_steps:
            raise PropagationError(f"exceeded {max_steps} steps")

        ta, ya = t[act], y[act]
        dirn = direction[act]
        target = t_out[act, kidx[act]]
        remaining = np.abs(target - ta)
        h_prop = h_abs[act]
        clipped = h_prop >= remaining * (1.0 - 1e-12)
        # avoid a tiny tail step just after an output
        stretch = (~clipped) & (h_prop > 0.5 * remaining)
        h_use = np.where(clipped, remaining, np.where(stretch, 0.5 * remaining, h_prop))
        h = dirn * h_use

        need = ~k1_ok[act]
        if need.any():
            sub = act[need]
            k1[sub] = fflat(t[sub], y[sub])
            k1_ok[sub] = True
            evals += 1
        ks = [k1[act]]
        for s in range(1, 7):
            acc = ya.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc += (h * a)[:, None] * ks[j]
            ks.append(fflat(ta + _C[s] * h, acc))
            evals += 1
        y_new = ya.copy()
        err = np.zeros_like(ya)
        for j in range(7):
            if _B[j] != 0.0:
                y_new += (h * _B[j])[:, None] * ks[j]
            if _E[j] != 0.0:
                err += (h * _E[j])[:, None] * ks[j]
        mag = np.maximum(np.abs(ya), np.abs(y_new))
        sc = atol * np.minimum(1.0, colscale(mag)) + rtol * np.maximum(mag, rel_floor * colscale(mag))
        with np.errstate(over="ignore", invalid="ignore"):
            en = np.sqrt(np.mean((err / sc) ** 2, axis=1))
        en = np.where(np.isfinite(en), en, np.inf)
        accept = en <= 1.0

        # step size update
        with np.errstate(divide="ignore", over="ignore"):
            fac_acc = SAFETY * np.maximum(en, 1e-10) ** (-ALPHA) * err_prev[act] ** BETA
            fac_rej = SAFETY * np.maximum(en, 1e-10) ** (-1 / 5)
        fac_acc = np.clip(fac_acc, MIN_FACTOR, MAX_FACTOR)
        fac_rej = np.clip(np.where(np.isfinite(fac_rej), fac_rej, MIN_FACTOR), MIN_FACTOR, 1.0)
        base = np.where(clipped & accept, np.maximum(h_prop, h_use), h_use)
        h_abs[act] = np.minimum(np.where(accept, base * fac_acc, h_use * fac_rej), span[act])

        if accept.any():
            ia = act[accept]
            ynew_a = y_new[accept]
            if post_step is not None:
                ynew_a = np.asarray(post_step(ynew_a.reshape((len(ia),) + shape)),
                                    dtype=float).reshape(len(ia), D)
                k1_ok[ia] = False
            else:
                k1[ia] = ks[6][accept]
                k1_ok[ia] = True
            y[ia] = ynew_a
            t[ia] = np.where(clipped[accept], target[accept], ta[accept] + h[accept])
            err_prev[ia] = np.maximum(en[accept], 1e-4)

            big = np.max(np.abs(ynew_a), axis=1) > DIVERGENCE_LIMIT
            if big.any():
                ib = ia[big]
                diverged[ib] = True
                done[ib] = True
                for r in ib:
                    out[r, kidx[r]:] = np.inf
            hit_rows = ia[clipped[accept] & ~big]
            if hit_rows.size:
                _flush(t, y, t_out, kidx, out, done, K, rows=hit_rows)

        tiny = h_abs[act] < 1e-14 * np.maximum(1.0, np.abs(t[act]))
        if np.any(tiny & ~done[act]):
            r = act[np.flatnonzero(tiny & ~done[act])[0]]
            raise StepSizeUnderflow(float(t[r]))

    return BatchResult(out.reshape((N, K) + shape), diverged, t.copy(), steps, evals)


def _flush(t, y, t_out, kidx, out, done, K, rows=None):
    """Record every pending output equal to the current time."""
    rows = np.flatnonzero(~done) if rows is None else rows
    for r in rows:
        while kidx[r] < K and t_out[r, kidx[r]] == t[r]:
            out[r, kidx[r]] = y[r]
            kidx[r] += 1
        if kidx[r] >= K:
            done[r] = True
