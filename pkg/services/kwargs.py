"""The kwargs mini-language of the processing section.

Grammar::

    kwargs := '' | '{' '}' | '{' pair (',' pair)* '}'
    pair   := key ':' value
    value  := int | float | bool | quoted-string | '[' [value (',' value)*] ']' | identifier

Booleans are the reserved words true/false/True/False; every other identifier is a
bare reference resolved later by `resolve_args`.
"""
from __future__ import annotations

import math
import re
from typing import Any, Collection, Dict, List, Mapping, NamedTuple, Union

from framework.errors import DanglingGridRef, DuplicateKey, KwargsSyntax, UnresolvedReference

RESERVED_GRID_KEY = "variable"
_BOOLS = {"true": True, "True": True, "false": False, "False": False}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"-?\d+(\.\d+)?([eE][-+]?\d+)?")


class Bare(NamedTuple):
    """An unquoted identifier awaiting resolution."""

    name: str


class GridRef(NamedTuple):
    name: str


class ContextRef(NamedTuple):
    name: str


RawValue = Union[int, float, bool, str, Bare, List[Any]]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str) -> KwargsSyntax:
        return KwargsSyntax(self.pos, message)

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise self.fail(f"expected '{ch}'")
        self.pos += 1

    def identifier(self) -> str:
        self.skip()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            raise self.fail("expected an identifier")
        self.pos = m.end()
        return m.group(0)

    def string(self) -> str:
        quote = self.text[self.pos]
        self.pos += 1
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\" and self.pos + 1 < len(self.text):
                out.append(self.text[self.pos + 1])
                self.pos += 2
                continue
            if ch == quote:
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1
        raise self.fail("unterminated string")

    def value(self) -> RawValue:
        ch = self.peek()
        if ch in ("'", '"'):
            return self.string()
        if ch == "[":
            self.pos += 1
            items: List[Any] = []
            if self.peek() == "]":
                self.pos += 1
                return items
            while True:
                items.append(self.value())
                if self.peek() == ",":
                    self.pos += 1
                    continue
                self.expect("]")
                return items
        m = _NUMBER.match(self.text, self.pos)
        if m:
            end = m.end()
            if end < len(self.text) and (self.text[end].isalnum() or self.text[end] == "_"):
                raise self.fail("malformed number")
            self.pos = end
            token = m.group(0)
            return float(token) if (m.group(1) or m.group(2)) else int(token)
        if _IDENT.match(self.text, self.pos):
            name = self.identifier()
            return _BOOLS[name] if name in _BOOLS else Bare(name)
        raise self.fail("expected a value")

    def parse(self) -> Dict[str, RawValue]:
        if not self.text.strip():
            return {}
        self.expect("{")
        out: Dict[str, RawValue] = {}
        if self.peek() == "}":
            self.pos += 1
        else:
            while True:
                key = self.identifier()
                if key in out:
                    raise DuplicateKey(key)
                self.expect(":")
                out[key] = self.value()
                if self.peek() == ",":
                    self.pos += 1
                    continue
                self.expect("}")
                break
        if self.peek():
            raise self.fail("trailing characters")
        return out


def parse_kwargs_string(expr: str) -> Dict[str, RawValue]:
    """Parse one `kwargs` entry into raw value tokens."""
    return _Parser(expr).parse()


def _format_value(v: RawValue) -> str:
    if isinstance(v, Bare):
        return v.name
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and not math.isfinite(v):
        raise ValueError(f"kwargs have no spelling for {v!r}")
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return "'" + v.replace("\\", "\\\\").replace("'", "\\'") + "'"
    if isinstance(v, list):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise TypeError(f"cannot format kwargs value {v!r}")


def format_kwargs(raw: Mapping[str, RawValue]) -> str:
    """Inverse of parse_kwargs_string."""
    if not raw:
        return ""
    return "{" + ", ".join(f"{k}: {_format_value(v)}" for k, v in raw.items()) + "}"


def _resolve_value(value: RawValue, pilot_locals: Mapping[str, Any], context: Mapping[str, Any]) -> Any:
    if isinstance(value, Bare):
        if value.name in pilot_locals:
            return pilot_locals[value.name]
        if value.name in context:
            return ContextRef(value.name)
        raise UnresolvedReference(value.name)
    if isinstance(value, list):
        return [_resolve_value(v, pilot_locals, context) for v in value]
    return value


def resolve_args(
    raw: Mapping[str, RawValue],
    pilot_locals: Mapping[str, Any],
    context: Mapping[str, Any],
    consumed: Collection[str],
) -> Dict[str, Any]:
    """Resolve raw tokens: grid refs, then pilot locals, then context, then literals.

    Pilot locals win over context variables of the same name; the context
    itself is never mutated.
    """
    resolved: Dict[str, Any] = {}
    for key in sorted(raw):
        value = raw[key]
        if key == RESERVED_GRID_KEY and isinstance(value, (str, Bare)):
            name = value.name if isinstance(value, Bare) else value
            if name not in consumed:
                raise DanglingGridRef(name)
            resolved[key] = GridRef(name)
        else:
            resolved[key] = _resolve_value(value, pilot_locals, context)
    return resolved
