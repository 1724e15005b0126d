"""Closed-form expressions for labels, weights and functions.

A deliberately small grammar::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" unary)?
    atom   := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"

``^`` binds tighter than unary minus and is right-associative, so ``-2^2``
is ``-4`` and ``2^-1`` is ``0.5``.  Variables are ``n``, ``j`` and ``x``;
functions are ``abs``, ``sqrt``, ``sign``, ``min``, ``max`` and the helper
``k(n) = 1 + n*(n-1)/2``.

Evaluation accepts Python floats or numpy arrays for the bindings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Union

import numpy as np

VARIABLES = frozenset({"n", "j", "x"})
FUNCTIONS = {"abs": 1, "sqrt": 1, "sign": 1, "k": 1, "min": -2, "max": -2}

# exponents that are small integers are expanded into products
_SMALL_POWER = 8


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, position: int, source: str = ""):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.source = source


class EvalError(ExprError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),−]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            if source[pos:].strip() == "":
                break
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        text = m.group(kind)
        if text == "−":
            text = "-"
        tokens.append((kind, text, m.start(kind)))
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

    def expect(self, text):
        kind, t, pos = self.take()
        if t != text or kind == "end":
            raise ParseError(f"expected {text!r}", pos, self.source)

    def fail(self, message):
        raise ParseError(message, self.peek()[2], self.source)

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "ident":
            self.take()
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos, self.source)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text]
                if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                    raise ParseError(f"wrong number of arguments to {text}", pos, self.source)
                return Call(text, tuple(args))
            if text not in VARIABLES:
                raise ParseError(f"unknown identifier {text!r}", pos, self.source)
            return Var(text)
        if (kind, text) == ("op", "("):
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected {text!r}")


def parse(source: str) -> Expr:
    """Parse ``source`` into an expression tree."""
    p = _Parser(source)
    node = p.expr()
    if p.peek()[0] != "end":
        p.fail(f"unexpected {p.peek()[1]!r}")
    return node


def to_source(e: Expr) -> str:
    """Fully parenthesised source text; ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    return f"{e.name}({', '.join(to_source(a) for a in e.args)})"


@lru_cache(maxsize=4096)
def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    out = frozenset()
    for a in e.args:
        out |= free_variables(a)
    return out


def _is_array(v) -> bool:
    return isinstance(v, np.ndarray) and v.ndim > 0


def _power(a, b):
    if not _is_array(b):
        b = float(b)
        if b.is_integer() and abs(b) <= _SMALL_POWER:
            e = int(abs(b))
            if e == 0:
                return np.ones_like(a) if _is_array(a) else 1.0
            out = a
            for _ in range(e - 1):
                out = out * a
            if b < 0:
                return _divide(1.0, out)
            return out
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any((a_arr < 0) & (b_arr != np.floor(b_arr))):
        raise EvalError("negative base with non-integer exponent")
    if np.any((a_arr == 0) & (b_arr < 0)):
        raise EvalError("division by zero (zero base, negative exponent)")
    with np.errstate(over="ignore"):
        out = np.power(a_arr, b_arr)
    return out if (_is_array(a) or _is_array(b)) else float(out)


def _divide(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvalError("division by zero")
    with np.errstate(over="ignore"):
        return a / b


def _binop(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        with np.errstate(over="ignore"):
            return a * b
    if op == "/":
        return _divide(a, b)
    return _power(a, b)


def _call(name, args):
    if name == "k":
        (n,) = args
        if _is_array(n):
            return 1.0 + n * (n - 1.0) / 2.0
        n = float(n)
        if n.is_integer():
            return float(1 + int(n) * (int(n) - 1) // 2)
        return 1.0 + n * (n - 1.0) / 2.0
    if name == "abs":
        return np.abs(args[0]) if _is_array(args[0]) else abs(float(args[0]))
    if name == "sign":
        return np.sign(args[0]) if _is_array(args[0]) else float(np.sign(args[0]))
    if name == "sqrt":
        if np.any(np.asarray(args[0]) < 0):
            raise EvalError("sqrt of negative number")
        return np.sqrt(args[0]) if _is_array(args[0]) else float(np.sqrt(args[0]))
    fn = np.minimum if name == "min" else np.maximum
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out if _is_array(out) else float(out)


def evaluate(e: Expr, bindings: Mapping[str, object]):
    """Evaluate ``e``; bindings may be floats or equal-shape numpy arrays."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, bindings)
    if isinstance(e, BinOp):
        return _binop(e.op, evaluate(e.left, bindings), evaluate(e.right, bindings))
    return _call(e.name, [evaluate(a, bindings) for a in e.args])


def evaluate_ragged(e: Expr, block: Mapping[str, object], point: Mapping[str, object],
                    counts: np.ndarray):
    """Evaluate over blocks of points without expanding block-level work.

    ``block`` holds per-block arrays (length = len(counts)); ``point`` holds
    per-point arrays (length = counts.sum()).  Subtrees that only read block
    variables are evaluated once per block and repeated afterwards.
    Returns ``(value, level)`` with level 0 (scalar), 1 (per block) or
    2 (per point); callers broadcast with :func:`expand`.
    """
    level, value = _ragged(e, block, point, counts)
    return value, level


def expand(value, level: int, counts: np.ndarray, size: int) -> np.ndarray:
    if level == 0:
        return np.full(size, float(value))
    if level == 1:
        return np.repeat(value, counts)
    return value


def _ragged(e, block, point, counts):
    names = free_variables(e)
    if not (names & point.keys()):
        if not names:
            return 0, evaluate(e, {})
        return 1, evaluate(e, block)
    if isinstance(e, Var):
        return 2, point[e.name]
    if isinstance(e, Neg):
        lvl, v = _ragged(e.operand, block, point, counts)
        return lvl, -v
    parts = [_ragged(c, block, point, counts)
             for c in ((e.left, e.right) if isinstance(e, BinOp) else e.args)]
    vals = [np.repeat(v, counts) if lvl == 1 else v for lvl, v in parts]
    if isinstance(e, BinOp):
        return 2, _binop(e.op, vals[0], vals[1])
    return 2, _call(e.name, vals)


def compile_expr(source) -> Expr:
    """Accept either source text or an already-parsed tree."""
    if isinstance(source, (Num, Var, Neg, BinOp, Call)):
        return source
    if isinstance(source, (int, float)):
        return Num(float(source))
    return parse(str(source))
