"""Small expression language for coefficient fields.

Expressions are built from numeric literals, coordinate variables ``x1..xd``,
the intrinsic ``normsq`` (squared Euclidean norm of the point), the binary
operators ``+ - * / ^``, unary negation, and the single-argument functions
``exp, ln, sqrt, sin, cos, abs``.  Precedence is ``^`` above unary minus
above ``* /`` above ``+ -``; ``^`` associates to the right, everything else
to the left.

Evaluation is pure and vectorized: the same point always produces the
bitwise-same value, and a batch of points evaluates in one numpy pass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("exp", "ln", "sqrt", "sin", "cos", "abs")

_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>[0-9]+(?:\.[0-9]*)?(?:[eE][+-]?[0-9]+)?|\.[0-9]+(?:[eE][+-]?[0-9]+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ExprError(ValueError):
    """Base class for expression failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ExprDomainError(ExprError):
    """Evaluation left the real domain (ln/sqrt of a negative, division by zero, overflow)."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class NormSq:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Num | Var | NormSq | Neg | BinOp | Call


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            bad = len(src) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, d: int):
        self.src = src
        self.d = d
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", pos)
        self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.unary())
            else:
                return node

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            # right-associative; exponent may carry its own unary minus
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if text == "normsq":
                return NormSq()
            m = _VAR_RE.match(text)
            if m:
                idx = int(m.group(1))
                if idx > self.d:
                    raise ExprSyntaxError(
                        f"variable x{idx} exceeds dimension {self.d}", pos
                    )
                return Var(idx - 1)
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"expected a value, got {text!r}" if text else "unexpected end of input", pos)


def parse_expr(src: str, d: int) -> Expr:
    """Parse ``src`` into an AST over coordinates x1..xd."""
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(src, d).parse()


def _check_finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise ExprDomainError(f"non-finite result in {what}")
    return value


def _eval(node: Expr, x: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x[..., node.index]
    if isinstance(node, NormSq):
        return np.sum(x * x, axis=-1)
    if isinstance(node, Neg):
        return -_eval(node.arg, x)
    if isinstance(node, BinOp):
        a = _eval(node.lhs, x)
        b = _eval(node.rhs, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise ExprDomainError("division by zero")
            return a / b
        if node.op == "^":
            with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
                return _check_finite(np.power(a, b), "power")
        raise AssertionError(node.op)
    if isinstance(node, Call):
        a = _eval(node.arg, x)
        if node.func == "exp":
            return _check_finite(np.exp(a), "exp")
        if node.func == "ln":
            if np.any(a <= 0):
                raise ExprDomainError("ln of a non-positive argument")
            return np.log(a)
        if node.func == "sqrt":
            if np.any(a < 0):
                raise ExprDomainError("sqrt of a negative argument")
            return np.sqrt(a)
        if node.func == "sin":
            return np.sin(a)
        if node.func == "cos":
            return np.cos(a)
        if node.func == "abs":
            return np.abs(a)
        raise AssertionError(node.func)
    raise AssertionError(type(node))


def eval_expr(e: Expr, x) -> np.ndarray | float:
    """Evaluate at one point (shape (d,)) or a batch (shape (n, d)).

    Returns a float for a single point and an (n,) array for a batch.
    Raises ExprDomainError on ln/sqrt domain violations, division by zero,
    or a non-finite result.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ValueError("point must have shape (d,) or (n, d)")
    out = _eval(e, x)
    out = np.asarray(out, dtype=float)
    if out.shape != x.shape[:-1]:
        out = np.broadcast_to(out, x.shape[:-1]).copy()
    _check_finite(out, "expression")
    if x.ndim == 1:
        return float(out)
    return out


_LEVEL_ADD, _LEVEL_MUL, _LEVEL_UNARY, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(node: Expr) -> int:
    if isinstance(node, BinOp):
        if node.op in "+-":
            return _LEVEL_ADD
        if node.op in "*/":
            return _LEVEL_MUL
        return _LEVEL_POW
    if isinstance(node, Neg):
        return _LEVEL_UNARY
    return _LEVEL_ATOM


def _wrap(text: str, level: int, minimum: int) -> str:
    return f"({text})" if level < minimum else text


def pretty(node: Expr) -> str:
    """Render an AST as canonical source (parse(pretty(e)) == e)."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, NormSq):
        return "normsq"
    if isinstance(node, Neg):
        return "-" + _wrap(pretty(node.arg), _level(node.arg), _LEVEL_UNARY)
    if isinstance(node, Call):
        return f"{node.func}({pretty(node.arg)})"
    if isinstance(node, BinOp):
        own = _level(node)
        lhs = _wrap(pretty(node.lhs), _level(node.lhs), own)
        if node.op == "^":
            # right-associative: the base must be an atom, the exponent may
            # be another power or a negation
            lhs = _wrap(pretty(node.lhs), _level(node.lhs), _LEVEL_ATOM)
            rhs = _wrap(pretty(node.rhs), _level(node.rhs), _LEVEL_UNARY)
        else:
            # left-associative: same-level ops on the right need parens
            rhs = _wrap(pretty(node.rhs), _level(node.rhs), own + 1)
        return f"{lhs} {node.op} {rhs}"
    raise AssertionError(type(node))
