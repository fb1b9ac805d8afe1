"""Expression language for scalar functions of one variable ``x``.

Drift, diffusion and utility functions are supplied as text on the command
line and in JSON spec files. The grammar is small on purpose::

    sum     := product (('+' | '-') product)*
    product := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := NUMBER | 'x' | FUNC '(' sum ')' | '(' sum ')'

``^`` binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``. The
function whitelist is ``exp``, ``ln``, ``sqrt`` and ``abs``; ``sign`` is
also accepted because it is what ``abs`` differentiates to.

Trees are immutable. :func:`evaluate` works on floats and numpy arrays and
raises :class:`DomainError` instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Apply",
    "ExprSyntaxError",
    "DomainError",
    "FUNCTIONS",
    "parse",
    "evaluate",
    "compile_expr",
    "differentiate",
    "to_text",
    "is_constant",
]

FUNCTIONS = ("exp", "ln", "sqrt", "abs", "sign")


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; ``offset`` is the character index."""

    def __init__(self, message: str, source: str, offset: int):
        self.source = source
        self.offset = offset
        pointer = source + "\n" + " " * offset + "^"
        super().__init__(f"{message} at offset {offset}\n{pointer}")


class DomainError(ArithmeticError):
    """Raised when an expression is evaluated outside its mathematical domain."""

    def __init__(self, message: str, subexpr: "Expr | None" = None):
        self.subexpr = subexpr
        if subexpr is not None:
            message = f"{message} in '{to_text(subexpr)}'"
        super().__init__(message)


class Expr:
    """Base class for expression tree nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str = "x"


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Apply(Expr):
    func: str
    arg: Expr


X = Var("x")

# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(source):
            if source[pos:].strip() == "":
                break
            m = _TOKEN.match(source, pos)
            if m is None or m.end() == pos:
                start = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
                raise ExprSyntaxError(f"unexpected character {source[start]!r}", source, start)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        self.tokens.append(("end", "", len(source)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str):
        kind, value, offset = self.take()
        if value != text or kind == "end":
            what = "end of input" if kind == "end" else repr(value)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", self.source, offset)

    def sum(self) -> Expr:
        left = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.product())
        return left

    def product(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and value == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value, offset = self.take()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if value == "x":
                return X
            if value in FUNCTIONS:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return Apply(value, arg)
            raise ExprSyntaxError(f"unknown identifier {value!r}", self.source, offset)
        if kind == "op" and value == "(":
            inner = self.sum()
            self.expect(")")
            return inner
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input (dangling operator?)", self.source, offset)
        if value == ")":
            raise ExprSyntaxError("unbalanced ')'", self.source, offset)
        raise ExprSyntaxError(f"dangling operator {value!r}", self.source, offset)


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree.

    >>> to_text(parse("2 ^ 3 ^ 2"))
    '2^3^2'
    """
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", str(source or ""), 0)
    p = _Parser(source)
    tree = p.sum()
    kind, value, offset = p.peek()
    if kind != "end":
        msg = "unbalanced ')'" if value == ")" else f"unexpected token {value!r}"
        raise ExprSyntaxError(msg, source, offset)
    return tree


# --------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return 5


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    """Render ``e`` with the minimum parentheses needed to re-parse it exactly."""
    if isinstance(e, Num):
        text = _fmt_number(abs(e.value))
        return f"(-{text})" if e.value < 0 or math.copysign(1.0, e.value) < 0 else text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Apply):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if _prec(e.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[e.op]
    left, right = to_text(e.left), to_text(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left}{e.op}{right}" if p == 2 else f"{left} {e.op} {right}"


# ------------------------------------------------------------- evaluation

Scalar = Union[float, np.ndarray]


def _check(cond, message, node):
    if np.any(cond):
        raise DomainError(message, node)


def _ln(v, node):
    _check(v <= 0, "ln of non-positive argument", node)
    return np.log(v)


def _sqrt(v, node):
    _check(v < 0, "sqrt of negative argument", node)
    return np.sqrt(v)


_APPLY = {
    "exp": lambda v, node: np.exp(v),
    "ln": _ln,
    "sqrt": _sqrt,
    "abs": lambda v, node: np.abs(v),
    "sign": lambda v, node: np.sign(v),
}


def _pow(a, b, node):
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check((a_arr < 0) & (b_arr != np.round(b_arr)), "negative base with non-integer exponent", node)
    _check((a_arr == 0) & (b_arr < 0), "division by zero (zero to a negative power)", node)
    return np.power(a, b)


def _div(a, b, node):
    _check(np.asarray(b) == 0, "division by zero", node)
    return np.divide(a, b)


_BINARY = {
    "+": lambda a, b, node: np.add(a, b),
    "-": lambda a, b, node: np.subtract(a, b),
    "*": lambda a, b, node: np.multiply(a, b),
    "/": _div,
    "^": _pow,
}


def compile_expr(e: Expr) -> Callable[[Scalar], Scalar]:
    """Turn ``e`` into a closure accepting floats or arrays.

    Overflow follows IEEE-754 (``exp(1000)`` is ``inf``); domain violations
    raise :class:`DomainError`.
    """
    if isinstance(e, Num):
        value = float(e.value)
        return lambda x: np.full_like(x, value, dtype=float) if np.ndim(x) else value
    if isinstance(e, Var):
        return lambda x: x
    if isinstance(e, Neg):
        f = compile_expr(e.operand)
        return lambda x: np.negative(f(x))
    if isinstance(e, Apply):
        f, g = compile_expr(e.arg), _APPLY[e.func]
        return lambda x: g(f(x), e)
    if isinstance(e, BinOp):
        fl, fr, op = compile_expr(e.left), compile_expr(e.right), _BINARY[e.op]
        return lambda x: op(fl(x), fr(x), e)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, x: Scalar) -> Scalar:
    """Evaluate ``e`` at ``x`` (float in, float out; array in, array out)."""
    if np.ndim(x) == 0:
        if not math.isfinite(x):
            raise DomainError(f"x must be finite, got {x}")
        with np.errstate(over="ignore"):
            return float(compile_expr(e)(float(x)))
    with np.errstate(over="ignore"):
        return compile_expr(e)(np.asarray(x, dtype=float))


# --------------------------------------------------------- differentiation


def is_constant(e: Expr) -> bool:
    if isinstance(e, Var):
        return False
    if isinstance(e, Num):
        return True
    if isinstance(e, Neg):
        return is_constant(e.operand)
    if isinstance(e, Apply):
        return is_constant(e.arg)
    return is_constant(e.left) and is_constant(e.right)


def _const(e: Expr) -> float | None:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg) and isinstance(e.operand, Num):
        return -e.operand.value
    return None


def _num(v: float) -> Expr:
    # negative literals are stored as Neg(Num) so printing round-trips
    if v < 0:
        return Neg(Num(-v))
    return Num(v + 0.0)


def _fold(op: str, a: float, b: float) -> float | None:
    try:
        if op == "^":
            if a < 0 and not float(b).is_integer():
                return None
            v = a**b
        else:
            v = {"+": a + b, "-": a - b, "*": a * b}[op] if op != "/" else a / b
    except (ZeroDivisionError, OverflowError):
        return None
    if isinstance(v, complex) or not math.isfinite(v):
        return None
    return v


def _neg(a: Expr) -> Expr:
    ca = _const(a)
    if ca is not None:
        return _num(-ca)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _bin(op: str, a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        v = _fold(op, ca, cb)
        if v is not None:
            return _num(v)
    if op == "+":
        if ca == 0:
            return b
        if cb == 0:
            return a
        if isinstance(b, Neg):
            return _bin("-", a, b.operand)
    elif op == "-":
        if cb == 0:
            return a
        if ca == 0:
            return _neg(b)
        if isinstance(b, Neg):
            return _bin("+", a, b.operand)
    elif op == "*":
        if ca == 0 or cb == 0:
            return Num(0.0)
        if ca == 1:
            return b
        if cb == 1:
            return a
        if ca == -1:
            return _neg(b)
        if cb == -1:
            return _neg(a)
    elif op == "/":
        if ca == 0:
            return Num(0.0)
        if cb == 1:
            return a
    elif op == "^":
        if cb == 1:
            return a
        if cb == 0:
            return Num(1.0)
    return BinOp(op, a, b)


def differentiate(e: Expr) -> Expr:
    """Symbolic derivative with respect to ``x``.

    Only literal arithmetic is folded. ``abs`` differentiates to ``sign``
    with ``sign(0) = 0``.
    """
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.operand))
    if isinstance(e, Apply):
        u, du = e.arg, differentiate(e.arg)
        if e.func == "exp":
            outer = e
        elif e.func == "ln":
            return _bin("/", du, u)
        elif e.func == "sqrt":
            return _bin("/", du, _bin("*", Num(2.0), e))
        elif e.func == "abs":
            outer = Apply("sign", u)
        else:  # sign is piecewise constant
            return Num(0.0)
        return _bin("*", outer, du)
    f, g = e.left, e.right
    if e.op in ("+", "-"):
        return _bin(e.op, differentiate(f), differentiate(g))
    df, dg = differentiate(f), differentiate(g)
    if e.op == "*":
        return _bin("+", _bin("*", df, g), _bin("*", f, dg))
    if e.op == "/":
        return _bin("/", _bin("-", _bin("*", df, g), _bin("*", f, dg)), _bin("^", g, Num(2.0)))
    # power
    if is_constant(g):
        return _bin("*", _bin("*", g, _bin("^", f, _bin("-", g, Num(1.0)))), df)
    if is_constant(f):
        return _bin("*", _bin("*", e, Apply("ln", f)), dg)
    return _bin(
        "*",
        e,
        _bin("+", _bin("*", dg, Apply("ln", f)), _bin("/", _bin("*", g, df), f)),
    )
