"""Adjoint and dual systems and the Gramian identities linking them.

For ``(A, B, C)`` on ``J``:

* adjoint  ``(-A^T, -C^T, -B^T)`` on ``J``, transition ``Psi_a(t, s) = Phi(s, t)^T``;
* dual     ``(A^T(-t), C^T(-t), B^T(-t))`` on ``-J``, transition
  ``Psi_d(t, s) = Phi(-s, -t)^T``.

Observability Gramians of the original system coincide with controllability
Gramians of either construction::

    M(t, t+s) = W_a(t, t+s) = K_d(-t-s, -t)
    N(t, t+s) = K_a(t, t+s) = W_d(-t-s, -t)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gramian import gramian_windows
from .propagator import DEFAULT_ATOL, DEFAULT_RTOL, transitions
from .system import DomainError, LtvSystem

PAIRS = (("M", "W_a"), ("M", "K_d"), ("W_a", "K_d"),
         ("N", "K_a"), ("N", "W_d"), ("K_a", "W_d"))


def _opt(mat, fn):
    return None if mat is None else fn(mat)


def adjoint_system(system: LtvSystem) -> LtvSystem:
    """``x' = -A^T x - C^T u`` with output map ``-B^T`` (when B exists), same domain."""
    C = system.require("C")
    return LtvSystem(
        system.A.transpose().negated(),
        C.transpose().negated(),
        _opt(system.B, lambda b: b.transpose().negated()),
        None,
        system.domain,
        _derived_name(system.name, "adjoint"),
    )


def dual_system(system: LtvSystem) -> LtvSystem:
    """``x' = A^T(-t) x + C^T(-t) u`` with output map ``B^T(-t)``, on the reflected domain."""
    C = system.require("C")
    return LtvSystem(
        system.A.transpose().reflected(),
        C.transpose().reflected(),
        _opt(system.B, lambda b: b.transpose().reflected()),
        None,
        system.domain.reflected(),
        _derived_name(system.name, "dual"),
    )


def adjoint_of_dual(system: LtvSystem) -> LtvSystem:
    return adjoint_system(dual_system(system))


def _derived_name(name: str, suffix: str) -> str:
    # applying the same construction twice returns the original label
    tail = f"-{suffix}"
    return name[: -len(tail)] if name.endswith(tail) else name + tail


def plant_adjoint(system: LtvSystem) -> LtvSystem:
    """Adjoint of the free plant only (``x' = -A^T x``)."""
    return LtvSystem(system.A.transpose().negated(), domain=system.domain,
                     name=_derived_name(system.name, "adjoint"))


def plant_dual(system: LtvSystem) -> LtvSystem:
    """Dual of the free plant only (``x' = A^T(-t) x``) on ``-J``."""
    return LtvSystem(system.A.transpose().reflected(), domain=system.domain.reflected(),
                     name=_derived_name(system.name, "dual"))


@dataclass(frozen=True)
class PsiCheck:
    passed: bool
    max_deviation: float
    adjoint_deviation: float
    dual_deviation: float
    pairs: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _rel_dev(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    k = X.shape[0]
    num = np.linalg.norm((X - Y).reshape(k, -1), axis=1)
    den = np.maximum(np.linalg.norm(X.reshape(k, -1), axis=1),
                     np.linalg.norm(Y.reshape(k, -1), axis=1))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def check_psi_relations(system: LtvSystem, pairs, tol: float = 1e-6, *,
                        rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> PsiCheck:
    """Check ``Psi_a(t, s) = Phi(s, t)^T`` and ``Psi_d(-s, -t) = Phi(t, s)^T`` on ``(t, s)`` pairs of ``J``.

    The adjoint and dual transitions come from integrating their own ODEs.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    adj = plant_adjoint(system)
    dual = plant_dual(system)
    phi_st = transitions(system, pairs[:, ::-1], rtol=rtol, atol=atol)      # Phi(s, t)
    phi_ts = transitions(system, pairs, rtol=rtol, atol=atol)               # Phi(t, s)
    psi_a = transitions(adj, pairs, rtol=rtol, atol=atol)                   # Psi_a(t, s)
    psi_d = transitions(dual, -pairs[:, ::-1], rtol=rtol, atol=atol)        # Psi_d(-s, -t)
    da = _rel_dev(psi_a, np.swapaxes(phi_st, 1, 2))
    dd = _rel_dev(psi_d, np.swapaxes(phi_ts, 1, 2))
    worst = float(max(da.max(initial=0.0), dd.max(initial=0.0)))
    return PsiCheck(worst <= tol, worst, float(da.max(initial=0.0)), float(dd.max(initial=0.0)),
                    len(pairs))


@dataclass(frozen=True)
class DualityReport:
    window: tuple            # (t, sigma)
    matrices: dict           # name -> ndarray
    deviations: dict         # "X~Y" -> relative deviation
    tol: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values())

    @property
    def passed(self) -> bool:
        return all(d <= self.tol for d in self.deviations.values())

    def deviation(self, a: str, b: str) -> float:
        key = f"{a}~{b}" if f"{a}~{b}" in self.deviations else f"{b}~{a}"
        return self.deviations[key]

    def to_dict(self) -> dict:
        return {
            "t": self.window[0],
            "sigma": self.window[1],
            "matrices": {k: v.tolist() for k, v in self.matrices.items()},
            "deviations": dict(self.deviations),
            "max_deviation": self.max_deviation,
            "tol": self.tol,
            "passed": self.passed,
        }


def verify_gramian_identities_grid(system: LtvSystem, t_values, sigmas, tol: float = 1e-6,
                                   **kw) -> list[DualityReport]:
    """Check the six Gramian matrices on every window ``(t, sigma)``; batched per system."""
    system.require("C")
    ts = np.asarray(t_values, dtype=float)
    ss = np.asarray(sigmas, dtype=float)
    T, S = np.meshgrid(ts, ss, indexing="ij")
    a, b = T.ravel(), (T + S).ravel()
    dual = dual_system(system)
    for lo, hi in zip(a, b):
        system.domain.check_span(float(lo), float(hi))
        if not (dual.domain.contains(-hi) and dual.domain.contains(-lo)):
            raise DomainError(f"window [{-hi}, {-lo}] outside the dual domain")
    adj = adjoint_system(system)
    mats = {
        "M": gramian_windows(system, "M", a, b, **kw)[0],
        "N": gramian_windows(system, "N", a, b, **kw)[0],
        "W_a": gramian_windows(adj, "W", a, b, **kw)[0],
        "K_a": gramian_windows(adj, "K", a, b, **kw)[0],
        "K_d": gramian_windows(dual, "K", -b, -a, **kw)[0],
        "W_d": gramian_windows(dual, "W", -b, -a, **kw)[0],
    }
    devs = {f"{x}~{y}": _rel_dev(mats[x], mats[y]) for x, y in PAIRS}
    reports = []
    for k in range(a.size):
        reports.append(DualityReport(
            (float(a[k]), float(b[k] - a[k])),
            {name: m[k] for name, m in mats.items()},
            {key: float(v[k]) for key, v in devs.items()},
            tol,
        ))
    return reports


def verify_gramian_identities(system: LtvSystem, t: float, sigma: float, tol: float = 1e-6,
                              **kw) -> DualityReport:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return verify_gramian_identities_grid(system, [t], [sigma], tol, **kw)[0]
