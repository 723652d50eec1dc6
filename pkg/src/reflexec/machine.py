"""The SECD machine extended with a store and an activation stack.

State is mutated in place: :func:`step` applies exactly one transition to the
running frame (the head of the activation stack ``A``) and returns the same
state object, or :class:`Halted` once the root coroutine runs out of code.
Use :meth:`MachineState.snapshot` when an independent copy is needed.

Rule labels attached to transitions and errors:

    7 const   8 var   9 prim   10 closure   11 ap   12 return   13 set
    14 create   15 resume   16 yield   17 coroutine return   18 newthread
    19 install closure   20 reify   21 install frame
"""

from __future__ import annotations

import copy
import math
import uuid
from dataclasses import dataclass, field

from . import files
from .errors import (
    EmptyCoroutine,
    FuelExhausted,
    MachineError,
    MachineTypeError,
    NotAClosure,
    ResumeNonSuspended,
    StackUnderflow,
    UnknownVariable,
    YieldFromRoot,
)
from .instructions import (
    Ap, Const, Create, Define, FieldsOf, Install, Join, MakeClosure, NameOf, NewThread, Pop,
    Prim, Reify, Resume, Sel, Set, Var, Yield, walk,
)
from .values import Handle, Loc, Table, display, is_atom, values_equal

DEFAULT_FUEL = 20_000_000

SUSPENDED, RUNNING, NORMAL, DEAD = "suspended", "running", "normal", "dead"
STATUSES = (SUSPENDED, RUNNING, NORMAL, DEAD)


# -- store entries -----------------------------------------------------------

@dataclass
class Cell:
    value: object = None


@dataclass
class Closure:
    proto: Loc
    env: Loc


@dataclass
class Proto:
    param: str
    code: tuple
    consts: tuple = ()
    inner: tuple = ()


def make_proto(param: str, code: tuple) -> Proto:
    consts, inner = [], []
    for instr in walk(code):
        if isinstance(instr, Const) and not any(values_equal(instr.value, c) for c in consts):
            consts.append(instr.value)
        elif isinstance(instr, MakeClosure) and instr.proto not in inner:
            inner.append(instr.proto)
    return Proto(param, tuple(code), tuple(consts), tuple(inner))


@dataclass
class Env:
    bindings: dict = field(default_factory=dict)
    parent: Loc | None = None


@dataclass
class Frame:
    S: list
    E: Loc | None
    code: tuple
    pc: int = 0
    D: Frame | None = None

    @property
    def C(self) -> tuple:
        return self.code[self.pc:]

    def chain(self) -> list[Frame]:
        out, f = [], self
        while f is not None:
            out.append(f)
            f = f.D
        return out


@dataclass
class Coroutine:
    frame: Frame | None
    status: str


@dataclass
class FileHandle:
    path: str
    mode: str
    position: int = 0


KIND_OF = {
    Closure: "closure",
    Proto: "proto",
    Env: "env",
    Table: "table",
    Coroutine: "coroutine",
    FileHandle: "file",
    Cell: "cell",
}


class Store:
    def __init__(self):
        self.entries: dict[int, object] = {}
        self.next_id = 1

    def alloc(self, obj) -> Loc:
        loc = Loc(self.next_id)
        self.next_id += 1
        self.entries[loc.id] = obj
        return loc

    def __getitem__(self, loc: Loc):
        return self.entries[loc.id]

    def __setitem__(self, loc: Loc, obj) -> None:
        self.entries[loc.id] = obj

    def __contains__(self, loc) -> bool:
        return isinstance(loc, Loc) and loc.id in self.entries

    def kind(self, loc: Loc) -> str:
        return KIND_OF[type(self.entries[loc.id])]


@dataclass
class Activation:
    loc: Loc
    frame: Frame


@dataclass
class Halted:
    value: object


@dataclass
class Suspended:
    state: MachineState
    value: object


@dataclass
class MachineState:
    A: list[Activation]          # A[-1] is the running coroutine
    store: Store
    output: list[str] = field(default_factory=list)
    files: list[Loc] = field(default_factory=list)
    file_root: str = "."
    tag: str = ""
    harness: bool = False
    last_rule: str | None = None

    @classmethod
    def fresh(cls, *, harness: bool = False, file_root: str = ".", tag: str | None = None,
              code: tuple = ()) -> MachineState:
        store = Store()
        root = store.alloc(Coroutine(None, RUNNING))
        env = store.alloc(Env())
        frame = Frame([], env, tuple(code))
        return cls([Activation(root, frame)], store, file_root=file_root,
                   tag=tag if tag is not None else uuid.uuid4().hex[:8], harness=harness)

    @property
    def running(self) -> Activation:
        return self.A[-1]

    @property
    def root(self) -> Activation:
        return self.A[0]

    def snapshot(self) -> MachineState:
        return copy.deepcopy(self)


# -- helpers -----------------------------------------------------------------

def lookup_cell(store: Store, env: Loc | None, name: str) -> Loc:
    while env is not None:
        e = store[env]
        cell = e.bindings.get(name)
        if cell is not None:
            return cell
        env = e.parent
    raise UnknownVariable(name)


def closure_of(state: MachineState, v, rule: str) -> Closure:
    if isinstance(v, Loc) and isinstance(state.store[v], Closure):
        return state.store[v]
    raise NotAClosure("apply", [v], rule=rule)


def coroutine_of(state: MachineState, v, op: str = "coroutine") -> Coroutine:
    if isinstance(v, Loc) and isinstance(state.store[v], Coroutine):
        return state.store[v]
    raise MachineTypeError(op, [v])


def activation_index(state: MachineState, co: Loc) -> int | None:
    for i, act in enumerate(state.A):
        if act.loc == co:
            return i
    return None


def find_frame(state: MachineState, co: Loc) -> Frame | None:
    """Top frame of ``co``, whether it sits in the store or in ``A``."""
    i = activation_index(state, co)
    if i is not None:
        return state.A[i].frame
    return state.store[co].frame


def set_top_frame(state: MachineState, co: Loc, frame: Frame | None) -> None:
    i = activation_index(state, co)
    if i is not None:
        state.A[i].frame = frame
    else:
        state.store[co].frame = frame


def frame_depth(state: MachineState, co: Loc) -> int:
    f = find_frame(state, co)
    n = 0
    while f is not None:
        n += 1
        f = f.D
    return n


# -- primitives --------------------------------------------------------------

def _num(op, args):
    for a in args:
        if type(a) is not float:
            raise MachineTypeError(op, args)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _concat(args):
    parts = []
    for a in args:
        if type(a) not in (str, float):
            raise MachineTypeError("concat", args)
        parts.append(display(a))
    return "".join(parts)


def _table_arg(state, op, args):
    t = args[0]
    if not (isinstance(t, Loc) and isinstance(state.store[t], Table)):
        raise MachineTypeError(op, args)
    return state.store[t]


def _p_get(state, args):
    return _table_arg(state, "get", args).get(args[1])


def _p_put(state, args):
    _table_arg(state, "put", args).set(args[1], args[2])
    return args[0]


def _p_len(state, args):
    v = args[0]
    if type(v) is str:
        return float(len(v))
    return float(_table_arg(state, "len", args).border())


def _p_print(state, args):
    state.output.append(display(args[0]))
    return None


def _p_status(state, args):
    return coroutine_of(state, args[0], "status").status


def _p_setstatus(state, args):
    from .reflect import setstatus

    if type(args[1]) is not str:
        raise MachineTypeError("setstatus", args)
    setstatus(state, args[0], args[1])
    return args[0]


def _p_sqrt(state, args):
    _num("sqrt", args)
    return math.sqrt(args[0]) if args[0] >= 0 else math.nan


def _p_open(state, args):
    if type(args[0]) is not str or type(args[1]) is not str:
        raise MachineTypeError("open", args)
    return files.register_open(state, args[0], args[1])


def _p_write(state, args):
    if type(args[1]) not in (str, float):
        raise MachineTypeError("write", args)
    files.file_write(state, args[0], display(args[1]))
    return None


def _p_read(state, args):
    if type(args[1]) is not float:
        raise MachineTypeError("read", args)
    return files.file_read(state, args[0], int(args[1]))


def _p_close(state, args):
    files.file_close(state, args[0])
    return None


def _arith(op, fn):
    def prim(state, args):
        _num(op, args)
        return fn(*args)
    return prim


def _p_eq(state, args):
    return values_equal(args[0], args[1])


def _p_lt(state, args):
    a, b = args
    if (type(a) is float and type(b) is float) or (type(a) is str and type(b) is str):
        return a < b
    raise MachineTypeError("lt", args)


# name -> (arity, implementation); only print, the table, coroutine and file
# operations touch the state
PRIMS = {
    "add": (2, _arith("add", lambda a, b: a + b)),
    "sub": (2, _arith("sub", lambda a, b: a - b)),
    "mul": (2, _arith("mul", lambda a, b: a * b)),
    "div": (2, _arith("div", _div)),
    "eq": (2, _p_eq),
    "lt": (2, _p_lt),
    "sqrt": (1, _p_sqrt),
    "concat": (2, lambda state, args: _concat(args)),
    "print": (1, _p_print),
    "newtable": (0, None),
    "get": (2, _p_get),
    "put": (3, _p_put),
    "len": (1, _p_len),
    "status": (1, _p_status),
    "setstatus": (2, _p_setstatus),
    "open": (2, _p_open),
    "write": (2, _p_write),
    "read": (2, _p_read),
    "close": (1, _p_close),
}


def apply_prim(op: str, args: list, state: MachineState | None = None):
    """Apply primitive ``op``; effects (print, tables, files) need ``state``."""
    try:
        arity, fn = PRIMS[op]
    except KeyError:
        raise MachineError(f"unknown primitive {op!r}", rule="9") from None
    if len(args) != arity:
        raise MachineError(f"{op} expects {arity} operands, got {len(args)}", rule="9")
    if op == "newtable":
        return state.store.alloc(Table())
    if state is None and op in ("print", "get", "put", "status", "setstatus",
                                "open", "write", "read", "close"):
        raise MachineError(f"{op} needs a machine state", rule="9")
    if op == "len" and type(args[0]) is not str and state is None:
        raise MachineError("len needs a machine state", rule="9")
    return fn(state, list(args))


# -- coroutine operations ----------------------------------------------------

def create(state: MachineState, closure) -> Loc:
    """Allocate a suspended coroutine whose first resume applies ``closure``."""
    closure_of(state, closure, "14")
    env = state.store.alloc(Env())
    frame = Frame([closure], env, (Ap(),))
    return state.store.alloc(Coroutine(frame, SUSPENDED))


def newthread(state: MachineState) -> Loc:
    return state.store.alloc(Coroutine(None, SUSPENDED))


def resume(state: MachineState, co, arg) -> None:
    c = coroutine_of(state, co, "resume")
    if c.status != SUSPENDED:
        raise ResumeNonSuspended(co, c.status)
    if c.frame is None:
        raise EmptyCoroutine(co)
    frame = c.frame
    c.frame = None
    c.status = RUNNING
    state.store[state.A[-1].loc].status = NORMAL
    frame.S.append(arg)
    state.A.append(Activation(co, frame))


def yield_(state: MachineState, value) -> None:
    if len(state.A) < 2:
        raise YieldFromRoot()
    act = state.A.pop()
    c = state.store[act.loc]
    c.frame = act.frame
    c.status = SUSPENDED
    below = state.A[-1]
    state.store[below.loc].status = RUNNING
    below.frame.S.append(value)


def coroutine_return(state: MachineState, value) -> None:
    act = state.A.pop()
    c = state.store[act.loc]
    c.frame = None
    c.status = DEAD
    below = state.A[-1]
    state.store[below.loc].status = RUNNING
    below.frame.S.append(value)


def set_var(state: MachineState, name: str, value) -> None:
    cell = lookup_cell(state.store, state.A[-1].frame.E, name)
    state.store[cell].value = value


# -- transitions -------------------------------------------------------------

def _need(S, n):
    if len(S) < n:
        raise StackUnderflow(f"stack holds {len(S)} values, instruction needs {n}")


def _const(state, act, frame, instr):
    frame.S.append(instr.value)
    frame.pc += 1
    return "7"


def _var(state, act, frame, instr):
    cell = lookup_cell(state.store, frame.E, instr.name)
    frame.S.append(state.store[cell].value)
    frame.pc += 1
    return "8"


def _prim(state, act, frame, instr):
    n = instr.arity
    _need(frame.S, n)
    args = frame.S[len(frame.S) - n:] if n else []
    try:
        result = apply_prim(instr.name, args, state)
    except MachineError as exc:
        if exc.rule is None:
            exc.rule = "9"
        raise
    if n:
        del frame.S[-n:]
    frame.S.append(result)
    frame.pc += 1
    return "9"


def _closure(state, act, frame, instr):
    frame.S.append(state.store.alloc(Closure(instr.proto, frame.E)))
    frame.pc += 1
    return "10"


def _ap(state, act, frame, instr):
    _need(frame.S, 2)
    clo = closure_of(state, frame.S[-2], "11")
    arg = frame.S.pop()
    frame.S.pop()
    frame.pc += 1
    proto = state.store[clo.proto]
    cell = state.store.alloc(Cell(arg))
    env = state.store.alloc(Env({proto.param: cell}, clo.env))
    act.frame = Frame([], env, proto.code, 0, frame)
    return "11"


def _set(state, act, frame, instr):
    _need(frame.S, 1)
    cell = lookup_cell(state.store, frame.E, instr.name)
    state.store[cell].value = frame.S[-1]
    frame.pc += 1
    return "13"


def _define(state, act, frame, instr):
    _need(frame.S, 1)
    env = state.store[frame.E]
    cell = env.bindings.get(instr.name)
    if cell is None:
        env.bindings[instr.name] = state.store.alloc(Cell(frame.S[-1]))
    else:
        state.store[cell].value = frame.S[-1]
    frame.pc += 1
    return "define"


def _pop(state, act, frame, instr):
    _need(frame.S, 1)
    frame.S.pop()
    frame.pc += 1
    return "pop"


def _sel(state, act, frame, instr):
    _need(frame.S, 1)
    test = frame.S[-1]
    if type(test) is not bool:
        raise MachineTypeError("if", [test], rule="sel")
    frame.S.pop()
    branch = instr.then if test else instr.else_
    frame.code = branch + frame.code[frame.pc + 1:]
    frame.pc = 0
    return "sel"


def _join(state, act, frame, instr):
    frame.pc += 1
    return "join"


def _create(state, act, frame, instr):
    _need(frame.S, 1)
    co = create(state, frame.S[-1])
    frame.S[-1] = co
    frame.pc += 1
    return "14"


def _resume(state, act, frame, instr):
    _need(frame.S, 2)
    co, arg = frame.S[-1], frame.S[-2]
    c = coroutine_of(state, co, "resume")
    if c.status != SUSPENDED:
        raise ResumeNonSuspended(co, c.status)
    if c.frame is None:
        raise EmptyCoroutine(co)
    del frame.S[-2:]
    frame.pc += 1
    resume(state, co, arg)
    return "15"


def _yield(state, act, frame, instr):
    _need(frame.S, 1)
    if len(state.A) < 2:
        raise YieldFromRoot()
    value = frame.S.pop()
    frame.pc += 1
    yield_(state, value)
    return "16"


def _newthread(state, act, frame, instr):
    frame.S.append(newthread(state))
    frame.pc += 1
    return "18"


def _reify(state, act, frame, instr):
    from .reflect import reify

    _need(frame.S, 2)
    value, level = frame.S[-1], frame.S[-2]
    if level is not None and type(level) is not float:
        raise MachineTypeError("reify", [value, level], rule="20")
    rep = reify(state, value, None if level is None else int(level))
    del frame.S[-2:]
    frame.S.append(rep)
    frame.pc += 1
    return "20"


def _install(state, act, frame, instr):
    from .reflect import install

    _need(frame.S, 3)
    rep, target, level = frame.S[-1], frame.S[-2], frame.S[-3]
    if level is not None and type(level) is not float:
        raise MachineTypeError("install", [rep, target, level], rule="21")
    result = install(state, rep, target, None if level is None else int(level))
    del frame.S[-3:]
    frame.S.append(result)
    frame.pc += 1
    return "19" if isinstance(target, str) else "21"


def _nameof(state, act, frame, instr):
    from .reflect import name

    _need(frame.S, 1)
    frame.S[-1] = name(state, frame.S[-1])
    frame.pc += 1
    return "name"


def _fieldsof(state, act, frame, instr):
    from .reflect import fields

    _need(frame.S, 1)
    if type(frame.S[-1]) is not str:
        raise MachineTypeError("fields", [frame.S[-1]])
    schema = fields(frame.S[-1])
    frame.S[-1] = state.store.alloc(Table(schema.items()))
    frame.pc += 1
    return "fields"


_DISPATCH = {
    Const: _const, Var: _var, Prim: _prim, MakeClosure: _closure, Ap: _ap, Set: _set,
    Define: _define, Pop: _pop, Sel: _sel, Join: _join, Create: _create, Resume: _resume,
    Yield: _yield, NewThread: _newthread, Reify: _reify, Install: _install,
    NameOf: _nameof, FieldsOf: _fieldsof,
}


def step(state: MachineState):
    """Apply one transition; returns the state, or Halted at the end of the root."""
    act = state.A[-1]
    frame = act.frame
    if frame.pc >= len(frame.code):
        value = frame.S[-1] if frame.S else None
        if frame.D is not None:
            frame.D.S.append(value)
            act.frame = frame.D
            state.last_rule = "12"
            return state
        if len(state.A) == 1:
            state.last_rule = "halt"
            return Halted(value)
        coroutine_return(state, value)
        state.last_rule = "17"
        return state
    instr = frame.code[frame.pc]
    try:
        state.last_rule = _DISPATCH[type(instr)](state, act, frame, instr)
    except MachineError as exc:
        if exc.rule is None:
            exc.rule = instr.op
        raise
    return state


def run(state: MachineState, fuel: int | None = None):
    """Step until the root halts.

    With ``state.harness`` set, a yield that hands control back to the root
    coroutine stops the loop and returns :class:`Suspended`.
    """
    budget = DEFAULT_FUEL if fuel is None else fuel
    dispatch = _DISPATCH
    A = state.A
    for _ in range(budget):
        act = A[-1]
        frame = act.frame
        code = frame.code
        pc = frame.pc
        if pc < len(code):
            instr = code[pc]
            # fast path for the hottest rules, identical to step()
            t = type(instr)
            if t is Const:
                frame.S.append(instr.value)
                frame.pc = pc + 1
                state.last_rule = "7"
                continue
            try:
                rule = state.last_rule = dispatch[t](state, act, frame, instr)
            except MachineError as exc:
                if exc.rule is None:
                    exc.rule = instr.op
                raise
            if rule == "16" and state.harness and len(A) == 1:
                return Suspended(state, A[0].frame.S[-1])
        else:
            result = step(state)
            if isinstance(result, Halted):
                return result
    raise FuelExhausted(budget)


def load_closure_frame(state: MachineState, closure: Loc, arg) -> Frame:
    """Frame that applies ``closure`` to ``arg`` when run on its own."""
    return Frame([closure, arg], state.store.alloc(Env()), (Ap(),))


def check_invariants(state: MachineState) -> None:
    """Assert store hygiene and status discipline; used by the property tests."""
    store = state.store
    assert state.A, "activation stack is empty"
    assert all(i < store.next_id for i in store.entries)
    seen = set()
    for i, act in enumerate(state.A):
        assert act.loc not in seen, "coroutine appears twice in A"
        seen.add(act.loc)
        c = store[act.loc]
        assert isinstance(c, Coroutine)
        want = RUNNING if i == len(state.A) - 1 else NORMAL
        assert c.status == want, f"{act.loc} is {c.status}, expected {want}"
        assert c.frame is None
    for lid, obj in store.entries.items():
        if isinstance(obj, Coroutine):
            if Loc(lid) not in seen:
                assert obj.status in (SUSPENDED, DEAD)
            if obj.status == DEAD:
                assert obj.frame is None

    def check_value(v):
        if isinstance(v, Loc):
            assert v in store, f"dangling {v}"
        else:
            assert is_atom(v) or isinstance(v, Handle), f"bad value {v!r}"

    def check_frame(f):
        for fr in f.chain():
            for v in fr.S:
                check_value(v)
            if fr.E is not None:
                assert isinstance(store[fr.E], Env)
            for instr in walk(fr.code):
                if isinstance(instr, MakeClosure):
                    assert isinstance(store[instr.proto], Proto)

    for act in state.A:
        check_frame(act.frame)
    for obj in store.entries.values():
        if isinstance(obj, Cell):
            assert not isinstance(obj.value, Loc) or obj.value in store
            check_value(obj.value)
        elif isinstance(obj, Closure):
            assert isinstance(store[obj.proto], Proto) and isinstance(store[obj.env], Env)
        elif isinstance(obj, Env):
            for cell in obj.bindings.values():
                assert isinstance(store[cell], Cell)
            assert obj.parent is None or isinstance(store[obj.parent], Env)
        elif isinstance(obj, Table):
            for k, v in obj.items():
                check_value(k)
                check_value(v)
        elif isinstance(obj, Coroutine) and obj.frame is not None:
            check_frame(obj.frame)
