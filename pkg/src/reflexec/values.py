"""Machine values.

Atoms are plain Python objects: ``None`` (nil), ``bool``, ``float`` and
``str``.  Everything structured lives in the store and is reached through a
:class:`Loc`.  A :class:`Handle` is the name-based reference that appears
inside reified representations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import MachineTypeError


@dataclass(frozen=True, slots=True)
class Loc:
    id: int

    def __repr__(self) -> str:
        return f"Loc({self.id})"

    def __deepcopy__(self, memo):
        return self


@dataclass(frozen=True, slots=True)
class Handle:
    """Opaque reference to a structured value, by its machine-unique name."""

    name: str
    kind: str

    def __repr__(self) -> str:
        return f"Handle({self.name}:{self.kind})"

    def __deepcopy__(self, memo):
        return self


def is_atom(v) -> bool:
    return v is None or type(v) in (bool, float, str)


def is_number(v) -> bool:
    return type(v) is float


def fmt_number(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.14g" % x


def display(v) -> str:
    """Text shown by ``print`` and produced by ``concat``."""
    if v is None:
        return "nil"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if type(v) is float:
        return fmt_number(v)
    if type(v) is str:
        return v
    if isinstance(v, Loc):
        return f"<object {v.id}>"
    if isinstance(v, Handle):
        return f"<handle {v.name}>"
    return repr(v)


def values_equal(a, b) -> bool:
    # bool and float must never compare equal (True == 1.0 in Python)
    if type(a) is not type(b):
        return False
    return a == b


def _norm_key(k):
    if k is None:
        raise MachineTypeError("table index", [k])
    t = type(k)
    if t is bool:
        return ("bool", k)
    if t is int:
        return float(k)
    if t is float and k != k:
        raise MachineTypeError("table index", [k])
    return k


class Table:
    """Associative container keyed by any non-nil value.

    Assigning nil removes the key, as in Lua.
    """

    __slots__ = ("_data",)

    def __init__(self, items=()):
        self._data = {}
        for k, v in items:
            self.set(k, v)

    def get(self, key):
        entry = self._data.get(_norm_key(key))
        return None if entry is None else entry[1]

    def set(self, key, value) -> None:
        nk = _norm_key(key)
        if type(key) is int:
            key = float(key)
        if value is None:
            self._data.pop(nk, None)
        else:
            self._data[nk] = (key, value)

    def items(self):
        return [entry for entry in self._data.values()]

    def keys(self):
        return [k for k, _ in self._data.values()]

    def __len__(self) -> int:
        return len(self._data)

    def border(self) -> int:
        n = 0
        while (float(n + 1)) in self._data:
            n += 1
        return n

    def sequence(self) -> list | None:
        """Values at keys 1..n if the table is exactly a sequence, else None."""
        n = self.border()
        if n != len(self._data):
            return None
        return [self._data[float(i)][1] for i in range(1, n + 1)]

    @classmethod
    def from_sequence(cls, values) -> Table:
        t = cls()
        for i, v in enumerate(values, 1):
            t.set(float(i), v)
        return t

    def __eq__(self, other) -> bool:
        return isinstance(other, Table) and self._data == other._data

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {v!r}" for k, v in self._data.values())
        return "Table({" + inner + "})"
