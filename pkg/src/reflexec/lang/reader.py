"""S-expression reader with source spans."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import SexpSyntaxError

Span = tuple[int, int]


@dataclass(frozen=True)
class Atom:
    value: object
    kind: str          # number | string | boolean | nil | symbol
    span: Span = (0, 0)

    def __eq__(self, other):
        # spans are positional metadata; bool/float must stay distinct
        return (isinstance(other, Atom) and self.kind == other.kind
                and type(self.value) is type(other.value) and self.value == other.value)

    def __hash__(self):
        return hash((self.kind, self.value))


@dataclass(frozen=True)
class SList:
    items: tuple
    span: Span = (0, 0)

    def __eq__(self, other):
        return isinstance(other, SList) and self.items == other.items

    def __hash__(self):
        return hash(self.items)


SourceExpr = Atom | SList

_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?\Z")
_DELIMS = set("()\";") | set(" \t\r\n\f\v")
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\", "0": "\0"}


def symbol(name: str) -> Atom:
    return Atom(name, "symbol")


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self) -> None:
        text, n = self.text, len(self.text)
        while self.pos < n:
            ch = text[self.pos]
            if ch.isspace():
                self.pos += 1
            elif ch == ";":
                end = text.find("\n", self.pos)
                self.pos = n if end < 0 else end + 1
            else:
                break

    def at_end(self) -> bool:
        self.skip()
        return self.pos >= len(self.text)

    def read(self) -> SourceExpr:
        self.skip()
        if self.pos >= len(self.text):
            raise SexpSyntaxError((self.pos, self.pos), "an expression")
        ch = self.text[self.pos]
        if ch == "(":
            return self._list()
        if ch == ")":
            raise SexpSyntaxError((self.pos, self.pos + 1), "an expression, not ')'")
        if ch == '"':
            return self._string()
        return self._token()

    def _list(self) -> SList:
        start = self.pos
        self.pos += 1
        items = []
        while True:
            self.skip()
            if self.pos >= len(self.text):
                raise SexpSyntaxError((start, self.pos), "')' to close this list")
            if self.text[self.pos] == ")":
                self.pos += 1
                return SList(tuple(items), (start, self.pos))
            items.append(self.read())

    def _string(self) -> Atom:
        start = self.pos
        self.pos += 1
        out = []
        text = self.text
        while True:
            if self.pos >= len(text):
                raise SexpSyntaxError((start, self.pos), "closing '\"'")
            ch = text[self.pos]
            if ch == '"':
                self.pos += 1
                return Atom("".join(out), "string", (start, self.pos))
            if ch == "\\":
                if self.pos + 1 >= len(text) or text[self.pos + 1] not in _ESCAPES:
                    raise SexpSyntaxError((self.pos, self.pos + 2), "a valid escape")
                out.append(_ESCAPES[text[self.pos + 1]])
                self.pos += 2
            else:
                out.append(ch)
                self.pos += 1

    def _token(self) -> Atom:
        start = self.pos
        text = self.text
        while self.pos < len(text) and text[self.pos] not in _DELIMS:
            self.pos += 1
        tok = text[start:self.pos]
        span = (start, self.pos)
        if _NUMBER.match(tok):
            return Atom(float(tok), "number", span)
        if tok == "true":
            return Atom(True, "boolean", span)
        if tok == "false":
            return Atom(False, "boolean", span)
        if tok == "nil":
            return Atom(None, "nil", span)
        return Atom(tok, "symbol", span)


def parse(text: str) -> SourceExpr:
    """Parse exactly one expression."""
    r = _Reader(text)
    expr = r.read()
    if not r.at_end():
        raise SexpSyntaxError((r.pos, len(text)), "end of input")
    return expr


def parse_many(text: str) -> list[SourceExpr]:
    """Parse a sequence of top-level forms; at least one is required."""
    r = _Reader(text)
    forms = []
    while not r.at_end():
        forms.append(r.read())
    if not forms:
        raise SexpSyntaxError((0, len(text)), "at least one expression")
    return forms
