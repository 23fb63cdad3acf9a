"""A small, total expression language for stage reward functions.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | IDENT '(' ')' | '(' expr ')' | '-' factor

Identifiers name aggregate primitives over a ``NetworkState``; see
``PRIMITIVES``. Evaluation never raises: dividing by a value with magnitude
below 1e-12 yields 0 and logs a warning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .sim import NetworkState

log = logging.getLogger(__name__)

MAX_LENGTH = 1024
MAX_DEPTH = 32
DIV_EPS = 1e-12


def _sum_connected(s: NetworkState) -> float:
    return float(s.assoc.sum())


def _persistence(s: NetworkState) -> float:
    return float((s.assoc * s.prev_assoc).sum())


def _sum_qoe(s: NetworkState) -> float:
    return float(s.qoe.sum())


def _mean_qoe(s: NetworkState) -> float:
    return float(s.qoe.sum()) / s.assoc.shape[0]


def _connected_ue_fraction(s: NetworkState) -> float:
    return float((s.assoc.sum(axis=1) > 0).sum()) / s.assoc.shape[0]


def _mean_sinr_db(s: NetworkState) -> float:
    on = s.assoc == 1
    if not on.any():
        return 0.0
    return float(np.mean(10.0 * np.log10(s.sinr[on])))


PRIMITIVES: dict[str, Callable[[NetworkState], float]] = {
    "sum_connected": _sum_connected,
    "persistence": _persistence,
    "sum_qoe": _sum_qoe,
    "mean_qoe": _mean_qoe,
    "connected_ue_fraction": _connected_ue_fraction,
    "mean_sinr_db": _mean_sinr_db,
}

PRIMITIVE_DOCS = {
    "sum_connected": "number of active (UE, BS) connections at t",
    "persistence": "number of (UE, BS) connections active at both t-1 and t",
    "sum_qoe": "sum of QoE over all (UE, BS) pairs at t",
    "mean_qoe": "sum_qoe() divided by the number of UEs (average QoE per UE)",
    "connected_ue_fraction": "fraction of UEs with at least one connection",
    "mean_sinr_db": "mean SINR in dB over connected pairs (0 if none)",
}


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Prim:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


Node = Union[Const, Prim, BinOp, Neg]

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/()])
    """,
    re.VERBOSE | re.ASCII,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8", errors="surrogatepass"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.depth = 0

    def error(self, message: str, pos: int | None = None) -> ParseError:
        if pos is None:
            pos = self.tokens[self.i][2]
        return ParseError(message, _byte_offset(self.text, pos))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, val, pos = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "eof" else repr(val)
            raise self.error(f"expected {value!r}, found {found}", pos)

    def nest(self, pos: int) -> None:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error(f"expression nested deeper than {MAX_DEPTH}", pos)

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            value = float(val)
            if not np.isfinite(value):
                raise self.error(f"number {val!r} is not finite", pos)
            return Const(value)
        if kind == "ident":
            if val not in PRIMITIVES:
                raise self.error(f"unknown primitive {val!r}", pos)
            self.expect("(")
            self.expect(")")
            return Prim(val)
        if kind == "op" and val == "(":
            self.nest(pos)
            node = self.expr()
            self.expect(")")
            self.depth -= 1
            return node
        if kind == "op" and val == "-":
            self.nest(pos)
            node = Neg(self.factor())
            self.depth -= 1
            return node
        if kind == "eof":
            raise self.error("unexpected end of input", pos)
        raise self.error(f"unexpected token {val!r}", pos)


def parse(text: str | bytes) -> Node:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("input is not valid UTF-8", exc.start) from None
    if not isinstance(text, str):
        raise ParseError(f"expected a string, got {type(text).__name__}", 0)
    if len(text) > MAX_LENGTH:
        raise ParseError(f"expression longer than {MAX_LENGTH} characters", MAX_LENGTH)
    if not text.strip():
        raise ParseError("empty expression", 0)
    p = _Parser(text)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "eof":
        raise p.error(f"trailing input starting at {val!r}", pos)
    return node


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_text(node: Node) -> str:
    """Render with the minimal parentheses needed to parse back to ``node``."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Prim):
        return f"{node.name}()"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if isinstance(node.operand, BinOp):
            inner = f"({inner})"
        return f"-{inner}"
    prec = _PREC[node.op]
    left = to_text(node.left)
    if isinstance(node.left, BinOp) and _PREC[node.left.op] < prec:
        left = f"({left})"
    right = to_text(node.right)
    if isinstance(node.right, BinOp) and _PREC[node.right.op] <= prec:
        right = f"({right})"
    sep = " " if prec == 1 else ""
    return f"{left}{sep}{node.op}{sep}{right}"


def evaluate(node: Node, state: NetworkState, _cache: dict | None = None) -> float:
    cache = {} if _cache is None else _cache
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Prim):
        if node.name not in cache:
            cache[node.name] = PRIMITIVES[node.name](state)
        return cache[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.operand, state, cache)
    a = evaluate(node.left, state, cache)
    b = evaluate(node.right, state, cache)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if abs(b) < DIV_EPS:
        log.warning("reward division by ~0 (%r); yielding 0", b)
        return 0.0
    return a / b


class RewardExpr:
    """A parsed reward expression bound to its source text."""

    __slots__ = ("text", "tree")

    def __init__(self, text: str):
        self.text = text
        self.tree = parse(text)

    def __call__(self, state: NetworkState) -> float:
        return evaluate(self.tree, state)

    def __repr__(self) -> str:
        return f"RewardExpr({self.text!r})"
