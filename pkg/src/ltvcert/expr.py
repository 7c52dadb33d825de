"""Scalar expressions in the time variable ``t``.

A small recursive-descent parser turns strings such as ``"-t*sin(t)"`` or
``"sqrt(2*(t-1))*exp(-t+0.5)"`` into immutable expression trees.  Trees can
be pretty-printed, substituted (``t -> -t`` for time reflection) and compiled
into numpy-vectorised callables.

Evaluation is total on the declared domain only: ``log``/``sqrt`` of a
negative number, division by zero and overflow raise
:class:`EvaluationError` instead of propagating NaN or inf.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sign": 1,
    "min": 2,
    "max": 2,
}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int, source: str):
        super().__init__(f"{message} at position {position}: {source!r}")
        self.position = position
        self.source = source


class UnknownIdentifierError(ExprError):
    pass


class ArityError(ExprError):
    pass


class EvaluationError(ArithmeticError):
    """Raised when an expression is evaluated outside its natural domain."""


# -- tree -------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Const, Var, Neg, BinOp, Call]

T = Var()
ZERO = Const(0.0)
ONE = Const(1.0)


def negate(node: Node) -> Node:
    """Negation that folds constants and cancels double negatives."""
    if isinstance(node, Neg):
        return node.operand
    if isinstance(node, Const):
        return Const(-node.value)
    return Neg(node)


def add(left: Node, right: Node) -> Node:
    if isinstance(right, Const) and right.value == 0.0:
        return left
    if isinstance(left, Const) and left.value == 0.0:
        return right
    return BinOp("+", left, right)


def substitute(node: Node, replacement: Node) -> Node:
    """Replace every occurrence of ``t`` by ``replacement``."""
    if isinstance(node, Var):
        return replacement
    if isinstance(node, Const):
        return node
    if isinstance(node, Neg):
        return negate(substitute(node.operand, replacement))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, replacement),
                     substitute(node.right, replacement))
    return Call(node.name, tuple(substitute(a, replacement) for a in node.args))


def reflect(node: Node) -> Node:
    """Time reflection ``f(t) -> f(-t)``, exact at the tree level."""
    return substitute(node, negate(T))


# -- tokenizer / parser -----------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(source: str):
    pos = 0
    tokens = []
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError("unexpected character", pos, source)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            found = text or "end of input"
            raise ExprSyntaxError(f"expected {value!r}, found {found!r}", pos, self.source)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos, self.source)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        base = self.base()
        if self.peek()[1] == "^":
            self.take()
            # right associative: 2^3^2 == 2^(3^2)
            return BinOp("^", base, self.factor())
        return base

    def base(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text == "t":
                return T
            if text not in FUNCTIONS:
                raise UnknownIdentifierError(
                    f"unknown identifier {text!r} at position {pos}: {self.source!r}")
            self.expect("(")
            args = [self.expr()]
            while self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNCTIONS[text]:
                raise ArityError(
                    f"{text} takes {FUNCTIONS[text]} argument(s), got {len(args)}"
                    f" at position {pos}: {self.source!r}")
            return Call(text, tuple(args))
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if text == "-":
            # binds looser than '^' so that "-t^2" means -(t^2)
            return Neg(self.factor())
        if text == "+":
            return self.factor()
        found = text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", pos, self.source)


def parse_expr(source: str | float | int) -> Node:
    """Parse an expression string into a tree.

    Numbers are accepted directly so configs may hold ``0`` instead of ``"0"``.
    """
    if isinstance(source, bool):
        raise ExprError("booleans are not expressions")
    if isinstance(source, (int, float)):
        return Const(float(source))
    if not isinstance(source, str):
        raise ExprError(f"expression must be a string, got {type(source).__name__}")
    return _Parser(source).parse()


# -- printing ---------------------------------------------------------------


def to_source(node: Node) -> str:
    """Fully parenthesised source text; ``parse_expr(to_source(e))`` is equivalent to ``e``."""
    if isinstance(node, Const):
        if node.value < 0 or (node.value == 0 and math.copysign(1.0, node.value) < 0):
            return f"(-{_num(-node.value)})"
        return _num(node.value)
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)}{node.op}{to_source(node.right)})"
    return f"{node.name}({','.join(to_source(a) for a in node.args)})"


def _num(value: float) -> str:
    if math.isinf(value) or math.isnan(value):
        raise ExprError(f"non-finite constant {value}")
    text = repr(float(value))
    return text


# -- evaluation ---------------------------------------------------------------

_NP_NAMES = {
    "sin": "_np.sin",
    "cos": "_np.cos",
    "exp": "_np.exp",
    "log": "_np.log",
    "sqrt": "_np.sqrt",
    "abs": "_np.abs",
    "sign": "_np.sign",
    "min": "_np.minimum",
    "max": "_np.maximum",
}


def _np_code(node: Node) -> str:
    if isinstance(node, Const):
        return f"({node.value!r})"
    if isinstance(node, Var):
        return "t"
    if isinstance(node, Neg):
        return f"(-{_np_code(node.operand)})"
    if isinstance(node, BinOp):
        left, right = _np_code(node.left), _np_code(node.right)
        if node.op == "^":
            return f"_pow({left}, {right})"
        if node.op == "/":
            return f"_div({left}, {right})"
        return f"({left} {node.op} {right})"
    args = ", ".join(_np_code(a) for a in node.args)
    return f"{_NP_NAMES[node.name]}({args})"


def _pow(base, exponent):
    return np.power(np.asarray(base, dtype=float), exponent)


def _div(num, den):
    return np.true_divide(num, np.asarray(den, dtype=float))


_NAMESPACE = {"_np": np, "_pow": _pow, "_div": _div}


def compile_nodes(nodes: list[Node]) -> Callable:
    """Compile several trees into one function ``f(t) -> tuple`` of values.

    ``t`` may be a float or a 1-d array; each result broadcasts against ``t``.
    """
    body = ", ".join(_np_code(n) for n in nodes)
    code = f"lambda t: ({body},)"
    return eval(code, dict(_NAMESPACE))  # noqa: S307 - code built from our own tree


def evaluate(node: Node, t):
    """Evaluate a tree at ``t`` (float or array), raising on domain violations."""
    fn = compile_nodes([node])
    return checked_call(fn, t)[0]


def checked_call(fn: Callable, t):
    with np.errstate(divide="raise", over="raise", invalid="raise", under="ignore"):
        try:
            values = fn(t)
        except (FloatingPointError, ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(f"expression evaluation failed at t={_describe(t)}: {exc}") from exc
    for v in values:
        if not np.all(np.isfinite(v)):
            raise EvaluationError(f"non-finite value at t={_describe(t)}")
    return values


def _describe(t) -> str:
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if arr.size == 1:
        return repr(float(arr[0]))
    return f"[{arr.min():g}, {arr.max():g}] ({arr.size} points)"
