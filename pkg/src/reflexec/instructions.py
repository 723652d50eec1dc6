"""Instruction set of the machine.

A control list is a tuple of instructions.  ``Sel`` carries its two branches
inline; each branch ends in ``Join``, which only marks where the branch
rejoins the enclosing control list.
"""

from __future__ import annotations

from dataclasses import dataclass

from .values import Loc


class Instruction:
    __slots__ = ()
    op = "?"

    def __deepcopy__(self, memo):
        return self


@dataclass(frozen=True, slots=True, repr=False)
class Const(Instruction):
    value: object
    op = "const"

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, slots=True, repr=False)
class Var(Instruction):
    name: str
    op = "var"

    def __repr__(self):
        return f"Var({self.name})"


@dataclass(frozen=True, slots=True)
class MakeClosure(Instruction):
    # Loc once loaded into a machine; proto index inside a CompiledUnit before that
    proto: Loc | int
    op = "closure"


@dataclass(frozen=True, slots=True)
class Prim(Instruction):
    name: str
    arity: int
    op = "prim"


@dataclass(frozen=True, slots=True)
class Set(Instruction):
    name: str
    op = "set"


@dataclass(frozen=True, slots=True)
class Define(Instruction):
    name: str
    op = "define"


@dataclass(frozen=True, slots=True)
class Sel(Instruction):
    then: tuple
    else_: tuple
    op = "sel"


def _nullary(opname: str, clsname: str):
    @dataclass(frozen=True, slots=True)
    class _Op(Instruction):
        op = opname

        def __repr__(self):
            return clsname

    _Op.__name__ = _Op.__qualname__ = clsname
    return _Op


Ap = _nullary("ap", "Ap")
Pop = _nullary("pop", "Pop")
Join = _nullary("join", "Join")
Create = _nullary("create", "Create")
Resume = _nullary("resume", "Resume")
Yield = _nullary("yield", "Yield")
NewThread = _nullary("newthread", "NewThread")
Reify = _nullary("reify", "Reify")
Install = _nullary("install", "Install")
NameOf = _nullary("name", "NameOf")
FieldsOf = _nullary("fields", "FieldsOf")

NULLARY = {cls.op: cls for cls in (Ap, Pop, Join, Create, Resume, Yield, NewThread,
                                    Reify, Install, NameOf, FieldsOf)}
OPCODES = ("const", "var", "closure", "prim", "set", "define", "sel", *NULLARY)


def walk(code):
    """Yield every instruction of ``code``, descending into Sel branches."""
    stack = [code]
    while stack:
        for instr in stack.pop():
            yield instr
            if isinstance(instr, Sel):
                stack.append(instr.else_)
                stack.append(instr.then)


def map_protos(code, fn):
    """Rebuild ``code`` with every MakeClosure operand passed through ``fn``."""
    out = []
    for instr in code:
        if isinstance(instr, MakeClosure):
            instr = MakeClosure(fn(instr.proto))
        elif isinstance(instr, Sel):
            instr = Sel(map_protos(instr.then, fn), map_protos(instr.else_, fn))
        out.append(instr)
    return tuple(out)
