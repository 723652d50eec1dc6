"""Surface language: an S-expression reader and its compiler."""

from .compiler import (
    CompiledUnit, ProtoDef, compile, compile_forms, compile_source, load_unit, with_prelude,
)
from .reader import Atom, SList, parse, parse_many

__all__ = [
    "Atom", "CompiledUnit", "ProtoDef", "SList", "compile", "compile_forms", "compile_source",
    "load_unit", "parse", "parse_many", "with_prelude",
]
