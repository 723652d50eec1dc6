"""Reification and installation of machine entities.

A representation exists in two interchangeable forms:

* *plain*: Python dicts and lists of atoms and :class:`Handle` references,
  convenient for host code and used by the wire format;
* *table*: the same tree allocated as store tables, which is what the
  ``reify``/``install`` instructions hand to programs.

Only the first level of an entity is described; anything structured that it
refers to shows up as a Handle and must be reified separately.  Frames are
addressed by level: 1 is the innermost activation record of a coroutine,
``depth`` the outermost.  Installing at level 0 pushes a new innermost frame.
"""

from __future__ import annotations

import json

from .errors import (
    BadLevel,
    InstallIntoRunning,
    MachineTypeError,
    NameOfAtomic,
    ReifyAtomic,
    ReifyRunning,
    SetStatusRunning,
    ShapeMismatch,
    SuspendedWithoutFrames,
    UnknownTypeName,
    UnresolvedHandle,
)
from .instructions import (
    NULLARY, Ap, Const, Define, MakeClosure, Prim, Sel, Set, Var,
)
from .machine import (
    DEAD, NORMAL, PRIMS, RUNNING, STATUSES, SUSPENDED,
    Cell, Closure, Coroutine, Env, FileHandle, Frame, MachineState, Proto,
    activation_index, find_frame, frame_depth, make_proto, set_top_frame,
)
from .values import Handle, Loc, Table, is_atom

TYPE_NAMES = ("function", "proto", "env", "table", "frame", "thread", "file")

FIELDS = {
    "function": {"p": "proto", "env": "env"},
    "proto": {"param": "text", "code": "code", "consts": "list<atom>", "inner": "list<proto>"},
    "env": {"bindings": "list<pair<text,value>>", "parent": "env|nil"},
    "table": {"entries": "list<pair<value,value>>"},
    "frame": {"stack": "list<value>", "env": "env", "code": "code", "resumable": "boolean"},
    "thread": {"status": "text", "depth": "number", "frames": "list<frame>"},
    "file": {"path": "text", "mode": "text", "position": "number"},
}

TYPE_OF_KIND = {"closure": "function", "proto": "proto", "env": "env", "table": "table",
                "coroutine": "thread", "file": "file"}

_HANDLE_KIND = {Closure: "closure", Proto: "proto", Env: "env", Table: "table",
                Coroutine: "coroutine", FileHandle: "file"}


def fields(type_name: str) -> dict:
    try:
        return dict(FIELDS[type_name])
    except (KeyError, TypeError):
        raise UnknownTypeName(f"unknown type name {type_name!r}") from None


# -- names and handles -------------------------------------------------------

def name(state: MachineState, value) -> str:
    """Machine-unique identifier of a structured value."""
    if isinstance(value, Handle):
        resolve_name(state, value.name)
        return value.name
    if isinstance(value, Loc) and value in state.store:
        return f"{state.tag}:{value.id:x}"
    raise NameOfAtomic(f"atomic value {value!r} has no name")


def handle(state: MachineState, loc: Loc) -> Handle:
    return Handle(f"{state.tag}:{loc.id:x}", _HANDLE_KIND[type(state.store[loc])])


def resolve_name(state: MachineState, text: str) -> Loc:
    tag, _, hexid = text.partition(":")
    if tag != state.tag:
        raise UnresolvedHandle(text)
    try:
        loc = Loc(int(hexid, 16))
    except ValueError:
        raise UnresolvedHandle(text) from None
    if loc not in state.store or isinstance(state.store[loc], Cell):
        raise UnresolvedHandle(text)
    return loc


def resolve(state: MachineState, ref) -> Loc:
    if isinstance(ref, Loc):
        if ref not in state.store:
            raise UnresolvedHandle(repr(ref))
        return ref
    if isinstance(ref, Handle):
        return resolve_name(state, ref.name)
    raise ShapeMismatch("reference", f"expected a handle, got {ref!r}")


def _ref_of(state: MachineState, ref, cls, field: str) -> Loc:
    loc = resolve(state, ref)
    if not isinstance(state.store[loc], cls):
        raise ShapeMismatch(field, f"expected {cls.__name__.lower()}, got {state.store.kind(loc)}")
    return loc


def _value(state: MachineState, v, field: str):
    if is_atom(v):
        return v
    if isinstance(v, (Loc, Handle)):
        return resolve(state, v)
    if type(v) is int:
        return float(v)
    raise ShapeMismatch(field, f"not a value: {v!r}")


# -- instruction records -----------------------------------------------------

def instr_record(instr, ref) -> dict:
    if isinstance(instr, Const):
        return {"op": "const", "value": instr.value}
    if isinstance(instr, (Var, Set, Define)):
        return {"op": instr.op, "name": instr.name}
    if isinstance(instr, MakeClosure):
        return {"op": "closure", "proto": ref(instr.proto)}
    if isinstance(instr, Prim):
        return {"op": "prim", "name": instr.name, "arity": float(instr.arity)}
    if isinstance(instr, Sel):
        return {"op": "sel", "then": code_records(instr.then, ref),
                "else": code_records(instr.else_, ref)}
    return {"op": instr.op}


def code_records(code, ref) -> list:
    return [instr_record(i, ref) for i in code]


def _record_instr(state: MachineState, rec):
    if not isinstance(rec, dict):
        raise ShapeMismatch("code", f"instruction record expected, got {rec!r}")
    op = rec.get("op")
    if op == "const":
        if not is_atom(rec.get("value")) and type(rec.get("value")) is not int:
            raise ShapeMismatch("code", "const operand must be atomic")
        v = rec.get("value")
        return Const(float(v) if type(v) is int else v)
    if op in ("var", "set", "define"):
        nm = rec.get("name")
        if type(nm) is not str:
            raise ShapeMismatch("code", f"{op} needs a name")
        return {"var": Var, "set": Set, "define": Define}[op](nm)
    if op == "closure":
        return MakeClosure(_ref_of(state, rec.get("proto"), Proto, "code"))
    if op == "prim":
        nm, arity = rec.get("name"), rec.get("arity")
        if nm not in PRIMS or type(arity) not in (float, int) or int(arity) != PRIMS[nm][0]:
            raise ShapeMismatch("code", f"bad primitive {nm!r}/{arity!r}")
        return Prim(nm, int(arity))
    if op == "sel":
        return Sel(records_code(state, rec.get("then")), records_code(state, rec.get("else")))
    if op in NULLARY:
        return NULLARY[op]()
    raise ShapeMismatch("code", f"unknown opcode {op!r}")


def records_code(state: MachineState, records) -> tuple:
    if not isinstance(records, list):
        raise ShapeMismatch("code", "instruction sequence expected")
    return tuple(_record_instr(state, r) for r in records)


# -- reify -------------------------------------------------------------------

def _as_loc(state: MachineState, value) -> Loc:
    if isinstance(value, Handle):
        return resolve_name(state, value.name)
    if isinstance(value, Loc) and value in state.store:
        return value
    raise ReifyAtomic(f"atomic value {value!r} needs no reification")


def sublist(level: int, top: Frame | None) -> Frame | None:
    f = top
    for _ in range(level - 1):
        if f is None:
            return None
        f = f.D
    return f


def frame_plain(state: MachineState, frame: Frame, level: int) -> dict:
    enc = _encoder(state)
    return {
        "stack": [enc(v) for v in frame.S],
        "env": None if frame.E is None else handle(state, frame.E),
        "code": code_records(frame.code[frame.pc:], lambda loc: handle(state, loc)),
        "resumable": level == 1,
    }


def _encoder(state):
    def enc(v):
        return handle(state, v) if isinstance(v, Loc) else v
    return enc


def reify_plain(state: MachineState, value, level: int | None = None):
    """Plain representation of ``value`` (of frame ``level`` for coroutines)."""
    loc = _as_loc(state, value)
    obj = state.store[loc]
    enc = _encoder(state)
    if isinstance(obj, Coroutine):
        if level is None:
            return {"status": obj.status, "depth": float(frame_depth(state, loc))}
        i = activation_index(state, loc)
        if i is not None and i == len(state.A) - 1:
            raise ReifyRunning("cannot reify the running coroutine")
        if level < 1:
            raise BadLevel(f"frame levels start at 1, got {level}")
        frame = sublist(level, find_frame(state, loc))
        return None if frame is None else frame_plain(state, frame, level)
    if level is not None:
        raise BadLevel("a level only applies to coroutines")
    if isinstance(obj, Closure):
        return {"p": handle(state, obj.proto), "env": handle(state, obj.env)}
    if isinstance(obj, Proto):
        return {
            "param": obj.param,
            "code": code_records(obj.code, lambda l: handle(state, l)),
            "consts": list(obj.consts),
            "inner": [handle(state, p) for p in obj.inner],
        }
    if isinstance(obj, Env):
        return {
            "bindings": [[k, enc(state.store[c].value)] for k, c in obj.bindings.items()],
            "parent": None if obj.parent is None else handle(state, obj.parent),
        }
    if isinstance(obj, Table):
        return {"entries": [[enc(k), enc(v)] for k, v in obj.items()]}
    if isinstance(obj, FileHandle):
        return {"path": obj.path, "mode": obj.mode, "position": float(obj.position)}
    raise ReifyAtomic(f"{obj!r} cannot be reified")


def type_name_of(state: MachineState, value) -> str:
    return TYPE_OF_KIND[state.store.kind(_as_loc(state, value))]


def reify(state: MachineState, value, level: int | None = None) -> Loc | None:
    """Reify into a freshly allocated representation table (or nil past the last level)."""
    plain = reify_plain(state, value, level)
    if plain is None:
        return None
    return plain_to_table(state, plain)


# -- plain <-> table ---------------------------------------------------------

def plain_to_table(state: MachineState, plain) -> Loc:
    """Allocate a plain representation as store tables (lists get an ``n`` field)."""
    store = state.store

    def conv(v):
        if isinstance(v, dict):
            t = Table()
            for k, x in v.items():
                t.set(k, conv(x))
            return store.alloc(t)
        if isinstance(v, list):
            t = Table.from_sequence(conv(x) for x in v)
            t.set("n", float(len(v)))
            return store.alloc(t)
        return v

    return conv(plain)


def _table(state, v, field) -> Table:
    if isinstance(v, Handle):
        v = resolve_name(state, v.name)
    if isinstance(v, Loc) and isinstance(state.store[v], Table):
        return state.store[v]
    raise ShapeMismatch(field, f"table expected, got {v!r}")


def _seq(state, v, field) -> list:
    t = _table(state, v, field)
    n = t.get("n")
    count = int(n) if type(n) is float else t.border()
    return [t.get(float(i)) for i in range(1, count + 1)]


def _pair(state, v, field) -> list:
    t = _table(state, v, field)
    return [t.get(1.0), t.get(2.0)]


def _code_from_table(state, v, field="code") -> list:
    out = []
    for item in _seq(state, v, field):
        t = _table(state, item, field)
        rec = {k: x for k, x in t.items() if type(k) is str}
        if rec.get("op") == "sel":
            rec["then"] = _code_from_table(state, rec.get("then"), field)
            rec["else"] = _code_from_table(state, rec.get("else"), field)
        out.append(rec)
    return out


def table_to_plain(state: MachineState, rep, type_name: str) -> dict:
    """Read a representation table back into plain form, guided by the type's fields."""
    schema = fields(type_name)
    t = _table(state, rep, "representation")
    plain = {}
    for key, shape in schema.items():
        v = t.get(key)
        if v is None:
            continue
        if shape == "code":
            plain[key] = _code_from_table(state, v, key)
        elif shape.startswith("list<pair"):
            plain[key] = [_pair(state, pair, key) for pair in _seq(state, v, key)]
        elif shape.startswith("list<"):
            plain[key] = _seq(state, v, key)
        else:
            plain[key] = v
    return plain


def _rep_plain(state: MachineState, rep, type_name: str) -> dict:
    if isinstance(rep, dict):
        return rep
    if isinstance(rep, (Loc, Handle)):
        return table_to_plain(state, rep, type_name)
    raise ShapeMismatch("representation", f"expected a representation, got {rep!r}")


# -- install -----------------------------------------------------------------

def _check_keys(plain: dict, type_name: str) -> None:
    allowed = FIELDS[type_name]
    for key in plain:
        if key not in allowed:
            raise ShapeMismatch(key, f"not a field of {type_name}")


def _pairs(plain: dict, key: str):
    v = plain.get(key, [])
    if isinstance(v, dict):
        v = list(v.items())
    if not isinstance(v, list):
        raise ShapeMismatch(key, "list of pairs expected")
    for pair in v:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ShapeMismatch(key, f"pair expected, got {pair!r}")
    return v


def build_entity(state: MachineState, plain: dict, type_name: str):
    """Construct (without allocating) the store entry described by ``plain``."""
    if not isinstance(plain, dict):
        raise ShapeMismatch("representation", "record expected")
    if type_name not in FIELDS:
        raise UnknownTypeName(f"unknown type name {type_name!r}")
    _check_keys(plain, type_name)
    if type_name == "function":
        if "p" not in plain:
            raise ShapeMismatch("p", "missing prototype")
        proto = _ref_of(state, plain["p"], Proto, "p")
        env_ref = plain.get("env")
        env = (state.store.alloc(Env()) if env_ref is None
               else _ref_of(state, env_ref, Env, "env"))
        return Closure(proto, env)
    if type_name == "proto":
        param = plain.get("param", "_")
        if type(param) is not str:
            raise ShapeMismatch("param", "text expected")
        proto = make_proto(param, records_code(state, plain.get("code", [])))
        if "consts" in plain:
            given = [float(c) if type(c) is int else c for c in plain["consts"]]
            if json.dumps(given) != json.dumps(list(proto.consts)):
                raise ShapeMismatch("consts", "does not match the code")
        if "inner" in plain:
            inner = [_ref_of(state, r, Proto, "inner") for r in plain["inner"]]
            if inner != list(proto.inner):
                raise ShapeMismatch("inner", "does not match the code")
        return proto
    if type_name == "env":
        bindings = {}
        for k, v in _pairs(plain, "bindings"):
            if type(k) is not str:
                raise ShapeMismatch("bindings", f"variable name expected, got {k!r}")
            bindings[k] = state.store.alloc(Cell(_value(state, v, "bindings")))
        parent = plain.get("parent")
        return Env(bindings, None if parent is None else _ref_of(state, parent, Env, "parent"))
    if type_name == "table":
        t = Table()
        for k, v in _pairs(plain, "entries"):
            if k is None:
                raise ShapeMismatch("entries", "nil key")
            try:
                t.set(_value(state, k, "entries"), _value(state, v, "entries"))
            except MachineTypeError:
                raise ShapeMismatch("entries", f"invalid key {k!r}") from None
        return t
    if type_name == "frame":
        stack = plain.get("stack", [])
        if not isinstance(stack, list):
            raise ShapeMismatch("stack", "list expected")
        if "resumable" in plain and type(plain["resumable"]) is not bool:
            raise ShapeMismatch("resumable", "boolean expected")
        env = plain.get("env")
        return Frame([_value(state, v, "stack") for v in stack],
                     state.store.alloc(Env()) if env is None else _ref_of(state, env, Env, "env"),
                     records_code(state, plain.get("code", [])))
    if type_name == "thread":
        raise ShapeMismatch("thread", "rebuild coroutines with newthread plus frame installs")
    raise ShapeMismatch("file", "files are reopened by the pickler, not installed")


def install_plain(state: MachineState, plain: dict, type_name: str, into: Loc | None = None) -> Loc:
    obj = build_entity(state, plain, type_name)
    if isinstance(obj, Frame):
        raise ShapeMismatch("frame", "frames are installed into a coroutine")
    if into is not None:
        state.store[into] = obj
        return into
    return state.store.alloc(obj)


def put_frame(level: int, frame: Frame, top: Frame | None) -> Frame:
    """Chain with ``frame`` at ``level``; level 0 pushes a new innermost frame."""
    if level == 0:
        frame.D = top
        return frame
    chain = top.chain() if top is not None else []
    if level < 0 or level > len(chain):
        raise BadLevel(f"level {level} outside 0..{len(chain)}")
    frame.D = chain[level - 1].D
    if level == 1:
        return frame
    chain[level - 2].D = frame
    return top


def install_frame(state: MachineState, co, plain: dict, level: int = 0) -> Loc:
    loc = _ref_of(state, co, Coroutine, "target")
    i = activation_index(state, loc)
    if i is not None and i == len(state.A) - 1:
        raise InstallIntoRunning("cannot install into the running coroutine")
    frame = build_entity(state, plain, "frame")
    top = find_frame(state, loc)
    set_top_frame(state, loc, put_frame(level, frame, top))
    c = state.store[loc]
    if c.status == DEAD:
        c.status = SUSPENDED
    return loc


def install(state: MachineState, rep, target, level: int | None = None):
    """Rebuild a value of type ``target`` or a frame of coroutine ``target``."""
    if isinstance(target, str):
        if target not in FIELDS:
            raise UnknownTypeName(f"unknown type name {target!r}")
        if level not in (None, 0):
            raise BadLevel("a level only applies to coroutine targets")
        return install_plain(state, _rep_plain(state, rep, target), target)
    loc = _ref_of(state, target, Coroutine, "target")
    lvl = 0 if level is None else level
    if isinstance(rep, (Loc, Handle)):
        rloc = resolve(state, rep)
        if isinstance(state.store[rloc], Closure):
            # a closure installs as the bootstrap frame that applies it on first resume
            i = activation_index(state, loc)
            if i is not None and i == len(state.A) - 1:
                raise InstallIntoRunning("cannot install into the running coroutine")
            frame = Frame([rloc], state.store.alloc(Env()), (Ap(),))
            set_top_frame(state, loc, put_frame(lvl, frame, find_frame(state, loc)))
            return loc
    return install_frame(state, loc, _rep_plain(state, rep, "frame"), lvl)


def setstatus(state: MachineState, co, status: str) -> None:
    loc = _ref_of(state, co, Coroutine, "coroutine")
    if status not in STATUSES:
        raise ShapeMismatch("status", f"unknown status {status!r}")
    if status in (RUNNING, NORMAL) or activation_index(state, loc) is not None:
        raise SetStatusRunning("only inactive coroutines take a new status, and never running")
    c = state.store[loc]
    if status == SUSPENDED and c.frame is None:
        raise SuspendedWithoutFrames("a suspended coroutine needs at least one frame")
    if status == DEAD:
        c.frame = None
    c.status = status


# -- comparison helpers ------------------------------------------------------

def canonical(plain, rename: bool = False) -> str:
    """Deterministic text of a plain representation.

    With ``rename`` set, handle names are replaced by their order of first
    appearance so that representations can be compared across allocations.
    """
    names: dict[str, str] = {}

    def conv(v):
        if isinstance(v, Handle):
            if rename:
                return {"$h": names.setdefault(v.name, f"h{len(names)}"), "kind": v.kind}
            return {"$h": v.name, "kind": v.kind}
        if isinstance(v, Loc):
            return {"$loc": v.id}
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return json.dumps(conv(plain), sort_keys=True)
