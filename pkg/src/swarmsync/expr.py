"""A tiny arithmetic expression language for user-defined drifts and signals.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 't' | 'pi' | 'x' '[' INT ']' '[' INT ']'
            | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp

``x[k][d]`` is the d-th component of the k-th state block, both 1-based, so
``x[2][1]`` is the first velocity component.  Expressions are parsed into a
small tree and then compiled to a Python lambda over ``math`` functions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

from .errors import DimensionMismatch, ParseError

FUNCS = {"sin": "math.sin", "cos": "math.cos", "exp": "math.exp"}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()\[\]]))"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    col: int


def tokenize(src: str) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ParseError(f"unexpected character {src[bad]!r}", column=bad + 1)
        kind = m.lastgroup
        text = m.group(kind)
        out.append(Token(kind, text, m.start(kind) + 1))
        pos = m.end()
    out.append(Token("end", "", len(src) + 1))
    return out


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0
        self.max_block = 0
        self.max_axis = 0
        self.uses_t = False

    def peek(self) -> Token:
        return self.toks[self.i]

    def take(self, text: str | None = None) -> Token:
        tok = self.toks[self.i]
        if text is not None and tok.text != text:
            got = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, got {got!r}", column=tok.col)
        self.i += 1
        return tok

    def parse(self) -> str:
        code = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", column=tok.col)
        return code

    def expr(self) -> str:
        code = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            code = f"({code} {op} {self.term()})"
        return code

    def term(self) -> str:
        code = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            code = f"({code} {op} {self.unary()})"
        return code

    def unary(self) -> str:
        if self.peek().text in ("+", "-"):
            op = self.take().text
            return f"({op}{self.unary()})"
        return self.power()

    def power(self) -> str:
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return f"({base} ** {self.unary()})"
        return base

    def index(self) -> int:
        self.take("[")
        tok = self.take()
        if tok.kind != "num" or not tok.text.isdigit() or int(tok.text) < 1:
            raise ParseError("state index must be a positive integer", column=tok.col)
        self.take("]")
        return int(tok.text)

    def atom(self) -> str:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return repr(float(tok.text))
        if tok.kind == "name":
            self.take()
            if tok.text == "t":
                self.uses_t = True
                return "t"
            if tok.text == "pi":
                return repr(math.pi)
            if tok.text == "x":
                k, d = self.index(), self.index()
                self.max_block = max(self.max_block, k)
                self.max_axis = max(self.max_axis, d)
                return f"x[{k - 1}][{d - 1}]"
            if tok.text in FUNCS:
                self.take("(")
                inner = self.expr()
                self.take(")")
                return f"{FUNCS[tok.text]}({inner})"
            raise ParseError(f"unknown identifier {tok.text!r}", column=tok.col)
        if tok.text == "(":
            self.take()
            inner = self.expr()
            self.take(")")
            return f"({inner})"
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", column=tok.col)


@dataclass(frozen=True)
class Expression:
    source: str
    code: str
    max_block: int
    max_axis: int
    uses_t: bool
    fn: Callable

    def __call__(self, x, t: float = 0.0) -> float:
        return self.fn(x, t)


def compile_expression(src: str, n: int | None = None, p: int | None = None) -> Expression:
    """Parse ``src`` and return a callable ``f(x, t) -> float``.

    When ``n``/``p`` are given, state references beyond them raise
    :class:`DimensionMismatch`.
    """
    parser = _Parser(src)
    code = parser.parse()
    if n is not None and parser.max_block > n:
        raise DimensionMismatch(f"{src!r} references block {parser.max_block} but n={n}")
    if p is not None and parser.max_axis > p:
        raise DimensionMismatch(f"{src!r} references axis {parser.max_axis} but p={p}")
    raw = eval(f"lambda x, t: {code}", {"math": math, "__builtins__": {}})  # noqa: S307 - generated from the whitelist above

    def fn(x, t):
        # Overflow and division by zero become nan so that the simulator's
        # finiteness check reports them as divergence.
        try:
            return raw(x, t)
        except (OverflowError, ZeroDivisionError):
            return math.nan

    return Expression(src, code, parser.max_block, parser.max_axis, parser.uses_t, fn)
