"""Linear time-varying systems built from time-varying matrices.

``x' = A(t) x + B(t) u``, ``y = C(t) x + D(t) u`` on a time domain ``J``.
Matrices are either :class:`MatrixFunction` (expression entries, exact
reflection/negation at the tree level) or :class:`SampledMatrixFunction`
(arbitrary numeric callables, used for interpolated feedback gains and
closed loops).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import expr as ex

DEFAULT_MARGIN = 1e-9
_EDGE_SLACK = 1e-12


class DomainError(ValueError):
    """Evaluation or integration requested outside the time domain."""


class ConfigError(ValueError):
    """System configuration does not match the schema."""


class DimensionError(ConfigError):
    pass


@dataclass(frozen=True)
class TimeDomain:
    lower: float = -math.inf
    upper: float = math.inf
    excluded: tuple = ()
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError(f"empty domain [{self.lower}, {self.upper}]")
        for p in self.excluded:
            if not math.isfinite(p):
                raise DomainError("excluded points must be finite")
        object.__setattr__(self, "excluded", tuple(sorted(float(p) for p in self.excluded)))

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        ok = (t >= self.lower - _EDGE_SLACK) & (t <= self.upper + _EDGE_SLACK)
        for p in self.excluded:
            ok &= np.abs(t - p) > self.margin
        return ok

    def check(self, t) -> None:
        ok = self.contains(t)
        if not np.all(ok):
            bad = np.atleast_1d(np.asarray(t, dtype=float))[~np.atleast_1d(ok)]
            raise DomainError(f"t={bad[0]!r} outside domain {self.describe()}")

    def check_span(self, a: float, b: float) -> None:
        """Both endpoints in the domain and no excluded point in between."""
        lo, hi = min(a, b), max(a, b)
        self.check([lo, hi])
        for p in self.excluded:
            if lo - self.margin <= p <= hi + self.margin:
                raise DomainError(f"excluded point {p} lies in [{lo}, {hi}]")

    def reflected(self) -> "TimeDomain":
        return TimeDomain(-self.upper, -self.lower, tuple(-p for p in self.excluded), self.margin)

    def clip(self, lo: float, hi: float) -> tuple[float, float]:
        return max(lo, self.lower), min(hi, self.upper)

    def describe(self) -> str:
        text = f"[{self.lower:g}, {self.upper:g}]"
        if self.excluded:
            text += f" excluding {list(self.excluded)}"
        return text

    def to_config(self) -> dict:
        return {
            "min": _ext_to_json(self.lower),
            "max": _ext_to_json(self.upper),
            "excluded": list(self.excluded),
        }


def _ext_to_json(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _ext_from_json(x, default: float) -> float:
    if x is None:
        return default
    if isinstance(x, str):
        key = x.strip().lower()
        if key in ("inf", "+inf", "infinity"):
            return math.inf
        if key in ("-inf", "-infinity"):
            return -math.inf
        raise ConfigError(f"bad domain bound {x!r}")
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"bad domain bound {x!r}")
    return float(x)


class MatrixFunction:
    """Time-varying matrix whose entries are scalar expressions in ``t``."""

    def __init__(self, entries: Sequence[Sequence[ex.Node]]):
        rows = [tuple(r) for r in entries]
        if not rows or not rows[0]:
            raise DimensionError("matrix must have at least one row and column")
        if any(len(r) != len(rows[0]) for r in rows):
            raise DimensionError("ragged matrix")
        self._entries = tuple(rows)
        self._shape = (len(rows), len(rows[0]))
        self._fn = None

    @classmethod
    def parse(cls, rows) -> "MatrixFunction":
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise ConfigError("matrix must be an array of arrays of expressions")
        return cls([[ex.parse_expr(e) for e in r] for r in rows])

    @classmethod
    def constant(cls, values) -> "MatrixFunction":
        arr = np.atleast_2d(np.asarray(values, dtype=float))
        return cls([[ex.Const(float(v)) for v in row] for row in arr])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "MatrixFunction":
        return cls([[ex.ZERO] * cols for _ in range(rows)])

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    @property
    def entries(self):
        return self._entries

    def _compiled(self):
        if self._fn is None:
            self._fn = ex.compile_nodes([e for row in self._entries for e in row])
        return self._fn

    def evaluate(self, t: float) -> np.ndarray:
        vals = ex.checked_call(self._compiled(), float(t))
        return np.array(vals, dtype=float).reshape(self._shape)

    def evaluate_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        vals = ex.checked_call(self._compiled(), ts)
        out = np.empty((ts.size,) + self._shape)
        flat = out.reshape(ts.size, -1)
        for k, v in enumerate(vals):
            flat[:, k] = v
        return out

    def transpose(self) -> "MatrixFunction":
        r, c = self._shape
        return MatrixFunction([[self._entries[i][j] for i in range(r)] for j in range(c)])

    def negated(self) -> "MatrixFunction":
        return MatrixFunction([[ex.negate(e) for e in row] for row in self._entries])

    def reflected(self) -> "MatrixFunction":
        return MatrixFunction([[ex.reflect(e) for e in row] for row in self._entries])

    def shifted(self, ell: float) -> "MatrixFunction":
        """``A(t) + ell*I`` for square matrices."""
        r, c = self._shape
        if r != c:
            raise DimensionError("shift needs a square matrix")
        return MatrixFunction([[ex.add(e, ex.Const(float(ell))) if i == j else e
                                for j, e in enumerate(row)]
                               for i, row in enumerate(self._entries)])

    def sources(self) -> list[list[str]]:
        return [[ex.to_source(e) for e in row] for row in self._entries]

    def is_zero(self) -> bool:
        return all(isinstance(e, ex.Const) and e.value == 0.0
                   for row in self._entries for e in row)

    def __reduce__(self):
        return (MatrixFunction, (self._entries,))

    def __repr__(self):
        return f"MatrixFunction({self.sources()})"


class SampledMatrixFunction:
    """Matrix function backed by a numeric callable ``t -> (r, c) array``.

    ``many`` optionally evaluates a 1-d array of times at once.
    """

    def __init__(self, fn: Callable[[float], np.ndarray], shape: tuple[int, int],
                 many: Callable[[np.ndarray], np.ndarray] | None = None, label: str = "sampled"):
        self._fn = fn
        self._many = many
        self._shape = tuple(shape)
        self.label = label

    @property
    def shape(self):
        return self._shape

    def evaluate(self, t: float) -> np.ndarray:
        out = np.asarray(self._fn(float(t)), dtype=float).reshape(self._shape)
        if not np.all(np.isfinite(out)):
            raise ex.EvaluationError(f"non-finite matrix value at t={t!r}")
        return out

    def evaluate_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self._many is not None:
            out = np.asarray(self._many(ts), dtype=float).reshape((ts.size,) + self._shape)
        else:
            out = np.stack([self.evaluate(t) for t in ts]) if ts.size else np.empty((0,) + self._shape)
        if not np.all(np.isfinite(out)):
            raise ex.EvaluationError("non-finite matrix value")
        return out

    def transpose(self) -> "SampledMatrixFunction":
        many = None if self._many is None else (lambda ts: np.swapaxes(self._many(ts), 1, 2))
        return SampledMatrixFunction(lambda t: self._fn(t).T, self._shape[::-1], many,
                                     f"({self.label})^T")

    def negated(self) -> "SampledMatrixFunction":
        many = None if self._many is None else (lambda ts: -self._many(ts))
        return SampledMatrixFunction(lambda t: -self._fn(t), self._shape, many, f"-({self.label})")

    def reflected(self) -> "SampledMatrixFunction":
        many = None if self._many is None else (lambda ts: self._many(-ts))
        return SampledMatrixFunction(lambda t: self._fn(-t), self._shape, many,
                                     f"({self.label})(-t)")

    def shifted(self, ell: float) -> "SampledMatrixFunction":
        eye = np.eye(self._shape[0])
        many = None if self._many is None else (lambda ts: self._many(ts) + ell * eye)
        return SampledMatrixFunction(lambda t: self._fn(t) + ell * eye, self._shape, many,
                                     f"{self.label}+{ell}I")

    def is_zero(self) -> bool:
        return False


def combine(terms, shape) -> SampledMatrixFunction:
    """Sum of products of matrix functions, e.g. ``A - L C``.

    ``terms`` is a list of ``(sign, [f1, f2, ...])``; each product is evaluated
    left to right.
    """

    def one(t):
        out = np.zeros(shape)
        for sign, factors in terms:
            prod = factors[0].evaluate(t)
            for f in factors[1:]:
                prod = prod @ f.evaluate(t)
            out += sign * prod
        return out

    def many(ts):
        out = np.zeros((len(ts),) + tuple(shape))
        for sign, factors in terms:
            prod = factors[0].evaluate_many(ts)
            for f in factors[1:]:
                prod = prod @ f.evaluate_many(ts)
            out += sign * prod
        return out

    return SampledMatrixFunction(one, shape, many, "combined")


@dataclass(frozen=True)
class LtvSystem:
    A: object
    B: object = None
    C: object = None
    D: object = None
    domain: TimeDomain = field(default_factory=TimeDomain)
    name: str = "system"

    def __post_init__(self):
        n, n2 = self.A.shape
        if n != n2:
            raise DimensionError(f"A must be square, got {n}x{n2}")
        if self.B is not None and self.B.shape[0] != n:
            raise DimensionError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C is not None and self.C.shape[1] != n:
            raise DimensionError(f"C has {self.C.shape[1]} columns, expected {n}")
        if self.D is not None:
            if self.B is None or self.C is None:
                raise DimensionError("D requires both B and C")
            want = (self.C.shape[0], self.B.shape[1])
            if tuple(self.D.shape) != want:
                raise DimensionError(f"D is {self.D.shape[0]}x{self.D.shape[1]}, expected "
                                     f"{want[0]}x{want[1]}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def symbolic(self) -> bool:
        """True when every matrix is expression-based (so the system serialises)."""
        return all(m is None or isinstance(m, MatrixFunction)
                   for m in (self.A, self.B, self.C, self.D))

    def eval_A(self, t: float) -> np.ndarray:
        self.domain.check(t)
        return self.A.evaluate(t)

    def require(self, which: str):
        mat = getattr(self, which)
        if mat is None:
            raise ConfigError(f"system {self.name!r} has no {which} matrix")
        return mat

    def with_plant(self, A, name: str | None = None) -> "LtvSystem":
        return LtvSystem(A, self.B, self.C, self.D, self.domain, name or self.name)

    def to_config(self) -> dict:
        if not self.symbolic:
            raise ConfigError("only expression-based systems can be serialised")
        cfg = {"name": self.name, "n": self.n, "A": self.A.sources()}
        for key in ("B", "C", "D"):
            mat = getattr(self, key)
            if mat is not None:
                cfg[key] = mat.sources()
        cfg["domain"] = self.domain.to_config()
        return cfg


def eval_matrix(f, t: float, domain: TimeDomain | None = None) -> np.ndarray:
    """Evaluate a matrix function at ``t``, checking the domain when given."""
    if domain is not None:
        domain.check(t)
    return f.evaluate(t)


_KNOWN_KEYS = {"name", "n", "A", "B", "C", "D", "domain"}


def system_from_config(cfg: dict, extra_keys: Sequence[str] = ()) -> LtvSystem:
    if not isinstance(cfg, dict):
        raise ConfigError("system config must be a JSON object")
    unknown = set(cfg) - _KNOWN_KEYS - set(extra_keys)
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    if "A" not in cfg:
        raise ConfigError("config is missing required field 'A'")
    mats = {}
    for key in ("A", "B", "C", "D"):
        if key in cfg and cfg[key] is not None:
            try:
                mats[key] = MatrixFunction.parse(cfg[key])
            except ex.ExprError as exc:
                raise ConfigError(f"field {key}: {exc}") from exc
    n = cfg.get("n")
    if n is not None:
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("'n' must be a positive integer")
        if mats["A"].shape != (n, n):
            raise DimensionError(f"A is {mats['A'].shape[0]}x{mats['A'].shape[1]}, n={n}")
    dom = cfg.get("domain", {}) or {}
    if not isinstance(dom, dict):
        raise ConfigError("'domain' must be an object")
    excluded = dom.get("excluded", []) or []
    if not isinstance(excluded, list):
        raise ConfigError("'domain.excluded' must be a list")
    domain = TimeDomain(
        _ext_from_json(dom.get("min"), -math.inf),
        _ext_from_json(dom.get("max"), math.inf),
        tuple(float(p) for p in excluded),
        float(dom.get("margin", DEFAULT_MARGIN)),
    )
    name = cfg.get("name", "system")
    if not isinstance(name, str):
        raise ConfigError("'name' must be a string")
    return LtvSystem(mats["A"], mats.get("B"), mats.get("C"), mats.get("D"), domain, name)


def load_system(config) -> LtvSystem:
    """Build a system from a JSON string, a path-like or an already-parsed dict."""
    if isinstance(config, dict):
        return system_from_config(config)
    text = str(config)
    if text.lstrip().startswith("{"):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return system_from_config(cfg)
    try:
        with open(text, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {text}: {exc}") from exc
    return system_from_config(cfg)
