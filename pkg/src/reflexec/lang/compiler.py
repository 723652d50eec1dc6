"""Compiler from S-expressions to machine control lists.

Lambdas take exactly one parameter; ``(lambda (a b) e)`` is curried into
nested lambdas and ``(f a b)`` into ``((f a) b)``.  A lambda with no
parameters binds ``_``, and ``(f)`` applies ``f`` to nil.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from ..errors import ArityError, UnknownForm
from ..instructions import (
    Ap, Const, Create, Define, FieldsOf, Install, Join, MakeClosure, NameOf, NewThread, Pop, Prim,
    Reify, Resume, Sel, Set, Var, Yield, map_protos, walk,
)
from ..machine import MachineState, make_proto
from ..values import Loc, values_equal
from .reader import Atom, SList, SourceExpr, parse_many, symbol


@dataclass(frozen=True)
class ProtoDef:
    param: str
    code: tuple


@dataclass(frozen=True)
class CompiledUnit:
    protos: tuple        # ProtoDef, MakeClosure operands index into this tuple
    root: int
    consts: tuple

    def root_code(self) -> tuple:
        return self.protos[self.root].code


# surface name -> (primitive, arity); arity None means "fold over 2+ operands"
PRIM_FORMS = {
    "+": ("add", None),
    "*": ("mul", None),
    "-": ("sub", 2),
    "/": ("div", 2),
    "=": ("eq", 2),
    "<": ("lt", 2),
    "sqrt": ("sqrt", 1),
    "concat": ("concat", None),
    "print": ("print", 1),
    "get": ("get", 2),
    "put": ("put", 3),
    "len": ("len", 1),
    "status": ("status", 1),
    "setstatus": ("setstatus", 2),
    "open": ("open", 2),
    "write": ("write", 2),
    "read": ("read", 2),
    "close": ("close", 1),
}

SPECIAL_FORMS = ("lambda", "define", "set!", "if", "begin", "while", "and", "or", "table",
                 "create", "resume", "yield", "reify", "install", "newthread", "name", "fields")


class _Compiler:
    def __init__(self):
        self.protos: list[ProtoDef] = []
        self.gensym = 0

    # entry points

    def unit(self, forms: list[SourceExpr]) -> CompiledUnit:
        code = self.body(forms, forms[0].span if forms else (0, 0))
        self.protos.append(ProtoDef("_", code))
        consts = []
        for p in self.protos:
            for instr in walk(p.code):
                if isinstance(instr, Const) and not any(values_equal(instr.value, c) for c in consts):
                    consts.append(instr.value)
        return CompiledUnit(tuple(self.protos), len(self.protos) - 1, tuple(consts))

    def body(self, forms, span) -> tuple:
        if not forms:
            return (Const(None),)
        out = []
        for i, f in enumerate(forms):
            if i:
                out.append(Pop())
            out.extend(self.expr(f))
        return tuple(out)

    # expressions

    def expr(self, e: SourceExpr) -> list:
        if isinstance(e, Atom):
            if e.kind == "symbol":
                if e.value in SPECIAL_FORMS or e.value in PRIM_FORMS:
                    raise UnknownForm(f"{e.value!r} is a keyword, not a value", e.span)
                return [Var(e.value)]
            return [Const(e.value)]
        if not e.items:
            raise UnknownForm("empty application", e.span)
        head = e.items[0]
        if isinstance(head, Atom) and head.kind == "symbol":
            handler = getattr(self, "_f_" + head.value.replace("!", "_bang"), None)
            if head.value in SPECIAL_FORMS and handler is not None:
                return handler(e)
            if head.value in PRIM_FORMS:
                return self.prim(e, head.value)
        return self.application(e)

    def application(self, e: SList) -> list:
        out = self.expr(e.items[0])
        args = e.items[1:] or (Atom(None, "nil", e.span),)
        for a in args:
            out.extend(self.expr(a))
            out.append(Ap())
        return out

    def prim(self, e: SList, surface: str) -> list:
        op, arity = PRIM_FORMS[surface]
        args = e.items[1:]
        if arity is None:
            if len(args) < 2:
                raise ArityError(f"{surface} takes at least 2 operands", e.span)
            out = self.expr(args[0])
            for a in args[1:]:
                out.extend(self.expr(a))
                out.append(Prim(op, 2))
            return out
        if surface == "-" and len(args) == 1:
            return [Const(0.0), *self.expr(args[0]), Prim("sub", 2)]
        if len(args) != arity:
            raise ArityError(f"{surface} takes {arity} operand(s), got {len(args)}", e.span)
        out = []
        for a in args:
            out.extend(self.expr(a))
        out.append(Prim(op, arity))
        return out

    def _arity(self, e: SList, lo: int, hi: int | None = None) -> None:
        n = len(e.items) - 1
        if n < lo or (hi is not None and n > hi):
            want = f"{lo}" if hi == lo else f"{lo}..{'' if hi is None else hi}"
            raise ArityError(f"{e.items[0].value} takes {want} operand(s), got {n}", e.span)

    def _name(self, e: SourceExpr) -> str:
        if not (isinstance(e, Atom) and e.kind == "symbol"):
            raise UnknownForm("variable name expected", e.span)
        if e.value in SPECIAL_FORMS or e.value in PRIM_FORMS:
            raise UnknownForm(f"cannot bind keyword {e.value!r}", e.span)
        return e.value

    # special forms

    def _f_lambda(self, e: SList) -> list:
        self._arity(e, 1, None)
        params = e.items[1]
        if not isinstance(params, SList):
            raise UnknownForm("lambda parameter list expected", params.span)
        names = [self._name(p) for p in params.items] or ["_"]
        code = self.body(list(e.items[2:]), e.span)
        for param in reversed(names):
            self.protos.append(ProtoDef(param, code))
            code = (MakeClosure(len(self.protos) - 1),)
        return list(code)

    def _f_define(self, e: SList) -> list:
        self._arity(e, 2, 2)
        return [*self.expr(e.items[2]), Define(self._name(e.items[1]))]

    def _f_set_bang(self, e: SList) -> list:
        self._arity(e, 2, 2)
        return [*self.expr(e.items[2]), Set(self._name(e.items[1]))]

    def _f_if(self, e: SList) -> list:
        self._arity(e, 2, 3)
        then = tuple(self.expr(e.items[2])) + (Join(),)
        else_ = (tuple(self.expr(e.items[3])) if len(e.items) == 4 else (Const(None),)) + (Join(),)
        return [*self.expr(e.items[1]), Sel(then, else_)]

    def _f_begin(self, e: SList) -> list:
        return list(self.body(list(e.items[1:]), e.span))

    def _f_while(self, e: SList) -> list:
        # (begin (define L (lambda (_) (if c (begin body.. (L nil)) nil))) (L nil))
        self._arity(e, 1, None)
        self.gensym += 1
        loop = symbol(f"%while{self.gensym}")
        span = e.span
        call = SList((loop, Atom(None, "nil", span)), span)
        step = SList((symbol("begin"), *e.items[2:], call), span)
        test = SList((symbol("if"), e.items[1], step, Atom(None, "nil", span)), span)
        fn = SList((symbol("lambda"), SList((symbol("_"),), span), test), span)
        return [*self.expr(fn), Define(loop.value), Pop(), *self.expr(call), Pop(), Const(None)]

    def _f_and(self, e: SList) -> list:
        self._arity(e, 2, 2)
        return [*self.expr(e.items[1]),
                Sel((*self.expr(e.items[2]), Join()), (Const(False), Join()))]

    def _f_or(self, e: SList) -> list:
        self._arity(e, 2, 2)
        return [*self.expr(e.items[1]),
                Sel((Const(True), Join()), (*self.expr(e.items[2]), Join()))]

    def _f_table(self, e: SList) -> list:
        out = [Prim("newtable", 0)]
        for i, item in enumerate(e.items[1:], 1):
            out += [Const(float(i)), *self.expr(item), Prim("put", 3)]
        return out

    def _f_create(self, e: SList) -> list:
        self._arity(e, 1, 1)
        return [*self.expr(e.items[1]), Create()]

    def _f_resume(self, e: SList) -> list:
        self._arity(e, 1, 2)
        arg = self.expr(e.items[2]) if len(e.items) == 3 else [Const(None)]
        return [*arg, *self.expr(e.items[1]), Resume()]

    def _f_yield(self, e: SList) -> list:
        self._arity(e, 0, 1)
        return [*(self.expr(e.items[1]) if len(e.items) == 2 else [Const(None)]), Yield()]

    def _f_reify(self, e: SList) -> list:
        self._arity(e, 1, 2)
        level = self.expr(e.items[2]) if len(e.items) == 3 else [Const(None)]
        return [*level, *self.expr(e.items[1]), Reify()]

    def _f_install(self, e: SList) -> list:
        self._arity(e, 2, 3)
        level = self.expr(e.items[3]) if len(e.items) == 4 else [Const(None)]
        return [*level, *self.expr(e.items[2]), *self.expr(e.items[1]), Install()]

    def _f_newthread(self, e: SList) -> list:
        self._arity(e, 0, 0)
        return [NewThread()]

    def _f_name(self, e: SList) -> list:
        self._arity(e, 1, 1)
        return [*self.expr(e.items[1]), NameOf()]

    def _f_fields(self, e: SList) -> list:
        self._arity(e, 1, 1)
        return [*self.expr(e.items[1]), FieldsOf()]


def compile_forms(forms: list[SourceExpr]) -> CompiledUnit:
    return _Compiler().unit(list(forms))


def compile(expr: SourceExpr) -> CompiledUnit:  # noqa: A001 - mirrors the public contract
    return compile_forms([expr])


# -- prelude -----------------------------------------------------------------

def prelude_forms() -> list[SourceExpr]:
    text = resources.files(__package__).joinpath("prelude.sexp").read_text(encoding="utf-8")
    return parse_many(text)


def _symbols(e: SourceExpr, out: set) -> set:
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, Atom):
            if x.kind == "symbol":
                out.add(x.value)
        else:
            stack.extend(x.items)
    return out


def with_prelude(forms: list[SourceExpr]) -> list[SourceExpr]:
    """Prepend the prelude definitions that ``forms`` (transitively) use."""
    defs = []
    for f in prelude_forms():
        defs.append((f.items[1].value, f))
    wanted: set = set()
    for f in forms:
        _symbols(f, wanted)
    changed = True
    while changed:
        changed = False
        for nm, f in defs:
            if nm in wanted:
                before = len(wanted)
                _symbols(f.items[2], wanted)
                changed |= len(wanted) != before
    return [f for nm, f in defs if nm in wanted] + list(forms)


def compile_source(text: str, prelude: bool = True) -> CompiledUnit:
    forms = parse_many(text)
    return compile_forms(with_prelude(forms) if prelude else forms)


def load_unit(state: MachineState, unit: CompiledUnit) -> list[Loc]:
    """Allocate every proto of ``unit`` in the store; returns their locations."""
    locs: list[Loc] = []
    for p in unit.protos:
        code = map_protos(p.code, lambda i: locs[i])
        locs.append(state.store.alloc(make_proto(p.param, code)))
    return locs
