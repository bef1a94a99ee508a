"""Arithmetic expressions over x1..xd: parser, AST, plain and dual-number evaluation.

Grammar (standard precedence, ``^`` right-associative and binding tighter
than unary minus, so ``-x1^2 == -(x1^2)``)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

Evaluation is polymorphic: the same tree evaluates on floats, on numpy arrays
(one array per coordinate, for batched evaluation) and on :class:`Dual`
numbers carrying a full gradient.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, ExpressionSyntaxError, IndexOutOfRange, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "tanh")


# ----------------------------------------------------------------------------
# AST
# ----------------------------------------------------------------------------

class Expr:
    """Base class of all expression nodes. Nodes are immutable."""

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Constant(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based


@dataclass(frozen=True)
class Neg(Expr):
    child: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Func(Expr):
    name: str
    child: Expr


_BINARY_SYMBOLS = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def to_string(e: Expr) -> str:
    """Fully parenthesised text form; ``parse(to_string(e))`` evaluates like ``e``."""
    if isinstance(e, Constant):
        s = repr(float(e.value))
        return f"({s})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Neg):
        return f"(-{to_string(e.child)})"
    if isinstance(e, Pow):
        return f"({to_string(e.base)}^{to_string(e.exponent)})"
    if isinstance(e, Func):
        return f"{e.name}({to_string(e.child)})"
    sym = _BINARY_SYMBOLS[type(e)]
    return f"({to_string(e.left)} {sym} {to_string(e.right)})"


def max_index(e: Expr) -> int:
    """Largest variable index used in ``e`` (0 for constant expressions)."""
    if isinstance(e, Constant):
        return 0
    if isinstance(e, Var):
        return e.index
    if isinstance(e, (Neg, Func)):
        return max_index(e.child)
    if isinstance(e, Pow):
        return max(max_index(e.base), max_index(e.exponent))
    return max(max_index(e.left), max_index(e.right))


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "name", "op", "end"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            j = pos
            while j < n and text[j].isspace():
                j += 1
            raise ExpressionSyntaxError(f"unexpected character {text[j]!r}", j)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dimension: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dimension = dimension

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def _advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def _expect(self, text: str):
        if self.tok.text != text or self.tok.kind != "op":
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {what}", self.tok.pos)
        self._advance()

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            rhs = self.unary()
            e = Mul(e, rhs) if op == "*" else Div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self._advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return Pow(base, self.unary())
        return base

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Constant(float(t.text))
        if t.kind == "name":
            self._advance()
            if t.text in FUNCTIONS:
                self._expect("(")
                child = self.expr()
                self._expect(")")
                return Func(t.text, child)
            m = re.fullmatch(r"x(\d+)", t.text)
            if m is None:
                raise UnknownIdentifier(f"unknown identifier {t.text!r} at position {t.pos}")
            k = int(m.group(1))
            if not 1 <= k <= self.dimension:
                raise IndexOutOfRange(
                    f"variable {t.text} out of range for dimension {self.dimension}"
                )
            return Var(k)
        if t.kind == "op" and t.text == "(":
            self._advance()
            e = self.expr()
            self._expect(")")
            return e
        if t.kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", t.pos)
        raise ExpressionSyntaxError(f"unexpected token {t.text!r}", t.pos)


def parse(text: str, dimension: int) -> Expr:
    """Parse ``text`` into an AST, validating variable indices against ``dimension``."""
    return _Parser(text, dimension).parse()


# ----------------------------------------------------------------------------
# Dual numbers
# ----------------------------------------------------------------------------

class Dual:
    """Value plus full gradient; arithmetic follows the product and chain rules."""

    __slots__ = ("value", "deriv")

    def __init__(self, value, deriv):
        self.value = float(value)
        self.deriv = np.asarray(deriv, dtype=float)

    @classmethod
    def constant(cls, value, dimension):
        return cls(value, np.zeros(dimension))

    @classmethod
    def variable(cls, value, index, dimension):
        d = np.zeros(dimension)
        d[index] = 1.0
        return cls(value, d)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.deriv.tolist()!r})"

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, np.zeros_like(self.deriv))

    def __add__(self, other):
        other = self._lift(other)
        return Dual(self.value + other.value, self.deriv + other.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        return Dual(self.value - other.value, self.deriv - other.deriv)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __mul__(self, other):
        other = self._lift(other)
        return Dual(self.value * other.value, self.deriv * other.value + self.value * other.deriv)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        if other.value == 0.0:
            raise DomainError("division by zero")
        q = self.value / other.value
        return Dual(q, (self.deriv - q * other.deriv) / other.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def sin(self):
        return Dual(math.sin(self.value), math.cos(self.value) * self.deriv)

    def cos(self):
        return Dual(math.cos(self.value), -math.sin(self.value) * self.deriv)

    def exp(self):
        v = math.exp(self.value)
        return Dual(v, v * self.deriv)

    def log(self):
        if self.value <= 0.0:
            raise DomainError("logarithm of a non-positive number")
        return Dual(math.log(self.value), self.deriv / self.value)

    def sqrt(self):
        if self.value < 0.0:
            raise DomainError("square root of a negative number")
        v = math.sqrt(self.value)
        if v == 0.0:
            raise DomainError("square root is not differentiable at zero")
        return Dual(v, self.deriv / (2.0 * v))

    def tanh(self):
        v = math.tanh(self.value)
        return Dual(v, (1.0 - v * v) * self.deriv)


# ----------------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------------

Number = Union[float, np.ndarray, Dual]


def _is_zero(v) -> bool:
    if isinstance(v, Dual):
        return v.value == 0.0
    return bool(np.any(np.asarray(v) == 0.0))


def _is_negative(v) -> bool:
    if isinstance(v, Dual):
        return v.value < 0.0
    return bool(np.any(np.asarray(v) < 0.0))


def _apply(name: str, v):
    if isinstance(v, Dual):
        return getattr(v, name)()
    if name == "sqrt" and _is_negative(v):
        raise DomainError("square root of a negative number")
    if name == "log" and bool(np.any(np.asarray(v) <= 0.0)):
        raise DomainError("logarithm of a non-positive number")
    return getattr(np, name)(v)


def _integer_exponent(e: Expr):
    if isinstance(e, Constant) and float(e.value).is_integer():
        return int(e.value)
    if isinstance(e, Neg) and isinstance(e.child, Constant) and float(e.child.value).is_integer():
        return -int(e.child.value)
    return None


def _int_power(b, n: int):
    if n == 0:
        return b * 0.0 + 1.0
    result = b
    for _ in range(abs(n) - 1):
        result = result * b
    if n < 0:
        if _is_zero(result):
            raise DomainError("division by zero")
        result = 1.0 / result
    return result


def _walk(e: Expr, x: Sequence):
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, Var):
        if e.index > len(x):
            raise IndexOutOfRange(f"x{e.index} used with a point of dimension {len(x)}")
        return x[e.index - 1]
    if isinstance(e, Neg):
        return -_walk(e.child, x)
    if isinstance(e, Add):
        return _walk(e.left, x) + _walk(e.right, x)
    if isinstance(e, Sub):
        return _walk(e.left, x) - _walk(e.right, x)
    if isinstance(e, Mul):
        return _walk(e.left, x) * _walk(e.right, x)
    if isinstance(e, Div):
        den = _walk(e.right, x)
        if _is_zero(den):
            raise DomainError("division by zero")
        return _walk(e.left, x) / den
    if isinstance(e, Pow):
        b = _walk(e.base, x)
        n = _integer_exponent(e.exponent)
        if n is not None:
            return _int_power(b, n)
        p = _walk(e.exponent, x)
        # exponent that is a plain integral number, e.g. computed as 3^2
        if isinstance(p, (int, float)) and float(p).is_integer() and abs(p) <= 64:
            return _int_power(b, int(p))
        if isinstance(b, Dual) or isinstance(p, Dual):
            if (b.value if isinstance(b, Dual) else b) <= 0.0:
                raise DomainError("real power of a non-positive base")
            if not isinstance(b, Dual):
                return _apply("exp", p * math.log(b))
            return _apply("exp", p * b.log())
        if bool(np.any(np.asarray(b) <= 0.0)):
            raise DomainError("real power of a non-positive base")
        return np.exp(p * np.log(b))
    if isinstance(e, Func):
        return _apply(e.name, _walk(e.child, x))
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, x) -> float:
    """Value of ``e`` at the point ``x``.

    Each coordinate of ``x`` may also be a numpy array, in which case the
    result is an array (possibly a scalar for constant expressions).
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        v = _walk(e, x)
    if isinstance(v, np.ndarray):
        return v
    return float(v)


def evaluate_dual(e: Expr, x) -> tuple[float, np.ndarray]:
    """Value and exact gradient of ``e`` at ``x`` by forward-mode differentiation."""
    d = len(x)
    seeds = [Dual.variable(float(xi), i, d) for i, xi in enumerate(x)]
    v = _walk(e, seeds)
    if not isinstance(v, Dual):
        return float(v), np.zeros(d)
    return v.value, v.deriv.copy()
