"""Tiny arithmetic expression language for coefficients, speeds and profiles.

Grammar (highest precedence first)::

    atom    := number | name | name '(' expr ')' | '(' expr ')'
    power   := atom ['^' unary]          (right associative)
    unary   := '-' unary | '+' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*

Evaluation works on floats and on numpy arrays (elementwise).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnboundVariableError, UnknownFunctionError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}
CONSTANTS = {"pi": np.pi}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node


def _tokenize(source):
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source):
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.advance()
        if text != value or kind != "op":
            raise ExprSyntaxError(f"expected {value!r}, found {text or 'end of input'!r}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise UnknownFunctionError(text, pos)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected token {text or 'end of input'!r}", pos)


def _free(node, acc):
    if isinstance(node, Var):
        if node.name not in CONSTANTS:
            acc.add(node.name)
    elif isinstance(node, Neg):
        _free(node.operand, acc)
    elif isinstance(node, BinOp):
        _free(node.left, acc)
        _free(node.right, acc)
    elif isinstance(node, Call):
        _free(node.arg, acc)
    return acc


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            if node.name in CONSTANTS:
                return CONSTANTS[node.name]
            raise UnboundVariableError(node.name) from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, env))
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(np.asarray(b) == 0):
            raise DomainError("division by zero")
        return a / b
    return np.power(a, b)


def _fmt_num(v):
    text = repr(float(v))
    return text if not text.startswith("-") else f"({text})"


def _pretty(node):
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_pretty(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg)})"
    return f"({_pretty(node.left)} {node.op} {_pretty(node.right)})"


@dataclass(frozen=True)
class Expr:
    """A parsed expression. Immutable; safe to share between threads."""

    source: str
    root: Node

    @property
    def free_vars(self) -> frozenset:
        return frozenset(_free(self.root, set()))

    def eval(self, bindings: Mapping[str, object] | None = None, check: bool = True):
        """Evaluate with the given variable bindings (floats or arrays).

        With ``check`` a non-finite result raises :class:`DomainError`;
        otherwise NaN/Inf propagate to the caller.
        """
        env = dict(bindings or {})
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            value = _eval(self.root, env)
        if isinstance(value, np.ndarray):
            if check and not np.all(np.isfinite(value)):
                raise DomainError(f"non-finite value evaluating {self.source!r}")
            return value
        value = float(value)
        if check and not np.isfinite(value):
            raise DomainError(f"non-finite value evaluating {self.source!r}")
        return value

    __call__ = eval

    def pretty(self) -> str:
        return _pretty(self.root)

    def __str__(self):
        return self.source


def parse(source: str) -> Expr:
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return Expr(source, _Parser(source).parse())


def eval(e: Expr | str, bindings: Mapping[str, object] | None = None, check: bool = True):  # noqa: A001
    if isinstance(e, str):
        e = parse(e)
    return e.eval(bindings, check=check)


def as_expr(value) -> Expr:
    """Accept an Expr, a string, or a number."""
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return parse(repr(float(value)))
    return parse(value)


def compile_vector(exprs, names):
    """Turn a list of expressions in ``names`` into a vectorized callable.

    The callable takes an array whose leading axis indexes ``names`` and
    returns an array whose leading axis indexes ``exprs``.
    """
    parsed = [as_expr(e) for e in exprs]
    names = list(names)
    for e in parsed:
        extra = e.free_vars - set(names)
        if extra:
            raise UnboundVariableError(sorted(extra)[0])

    def field(u):
        u = np.asarray(u, dtype=float)
        env = {name: u[i] for i, name in enumerate(names)}
        out = [np.broadcast_to(e.eval(env), u.shape[1:]) for e in parsed]
        return np.array(out, dtype=float)

    field.exprs = parsed
    field.names = names
    return field
