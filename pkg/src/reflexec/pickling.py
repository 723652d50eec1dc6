"""Deep capture of reified computations into a self-describing dump.

A dump (:class:`WireDoc`) is a graph of typed node records keyed by id.
Each distinct structured value is recorded once, so sharing and cycles
survive a round trip.  The byte form is canonical JSON: sorted keys, no
whitespace, shortest round-trip floats and node ids renumbered by a
breadth-first walk from the root.

Payloads are plain representations (see :mod:`reflexec.reflect`) with every
handle replaced by ``{"$ref": id}``; non-finite numbers are written as
``{"$num": "inf" | "-inf" | "nan"}``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    DanglingRef, NonSerializable, ParseError, SchemaViolation, UnfulfilledPromise,
)
from .files import MODES, REMAP, FileRecord, register_open, restore_file
from .machine import (
    DEAD, SUSPENDED, Closure, Coroutine, Env, FileHandle, MachineState, Proto,
    activation_index, frame_depth, newthread,
)
from .reflect import (
    FIELDS, TYPE_OF_KIND, TYPE_NAMES, install_frame, install_plain, name, reify_plain,
    resolve_name, setstatus,
)
from .values import Handle, Loc, Table

__all__ = [
    "WIRE_VERSION", "ErrorPolicy", "FileRecord", "NodeRecord", "WireDoc", "deep_capture",
    "deserialize", "drop_bindings", "instantiate", "normalize", "register_open",
    "restore_file", "serialize",
]

WIRE_VERSION = "reflexec-dump/1"


@dataclass
class NodeRecord:
    kind: str
    payload: dict
    origin: str | None = None


@dataclass
class WireDoc:
    root: str
    nodes: dict[str, NodeRecord]
    files: list[FileRecord] = field(default_factory=list)
    version: str = WIRE_VERSION

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes.values() if n.kind == kind)

    def thread(self) -> NodeRecord:
        return self.nodes[self.root]


@dataclass(frozen=True)
class ErrorPolicy:
    """What to do with a value that cannot be captured.

    ``hook`` receives the offending value's plain representation (or None when
    it has none) and returns a substitute :class:`NodeRecord`, or None to fail.
    """

    kind: str = "fail"
    hook: Callable[[dict | None], NodeRecord | None] | None = None

    @classmethod
    def named(cls, text: str) -> ErrorPolicy:
        if text == "fail":
            return FAIL
        if text == "nil":
            return REPLACE_WITH_NIL
        raise ValueError(f"unknown error policy {text!r}")

    @classmethod
    def with_hook(cls, fn) -> ErrorPolicy:
        return cls("hook", fn)


FAIL = ErrorPolicy("fail")
REPLACE_WITH_NIL = ErrorPolicy("nil")
ErrorPolicy.FAIL = FAIL
ErrorPolicy.REPLACE_WITH_NIL = REPLACE_WITH_NIL


# -- capture -----------------------------------------------------------------

def _problem(state: MachineState, loc: Loc) -> str | None:
    obj = state.store[loc]
    if isinstance(obj, Coroutine):
        if activation_index(state, loc) is not None:
            return f"coroutine is {obj.status}"
        if obj.status not in (SUSPENDED, DEAD):
            return f"coroutine is {obj.status}"
    elif isinstance(obj, FileHandle) and loc not in state.files:
        return "file is not registered"
    return None


def deep_capture(state: MachineState, value, policy: ErrorPolicy = FAIL) -> WireDoc:
    """Reify ``value`` and everything it reaches, each structured value once."""
    root = value if isinstance(value, Loc) else resolve_name(state, getattr(value, "name", ""))
    problem = _problem(state, root)
    if problem:
        raise NonSerializable(name(state, root), state.store.kind(root), problem)

    ids: dict[Loc, str] = {}
    nodes: dict[str, NodeRecord] = {}
    queue: deque[Loc] = deque()
    counter = [0]

    def fresh_id() -> str:
        counter[0] += 1
        return str(counter[0] - 1)

    def ref(loc: Loc):
        nid = ids.get(loc)
        if nid is not None:
            return {"$ref": nid}
        problem = _problem(state, loc)
        if problem is None:
            ids[loc] = nid = fresh_id()
            queue.append(loc)
            return {"$ref": nid}
        if policy.kind == "nil":
            return None
        if policy.kind == "hook" and policy.hook is not None:
            try:
                rep = reify_plain(state, loc)
            except Exception:
                rep = None
            rec = policy.hook(rep)
            if rec is not None:
                _check_record("hook", rec)
                ids[loc] = nid = fresh_id()
                nodes[nid] = rec
                return {"$ref": nid}
        raise NonSerializable(name(state, loc), state.store.kind(loc), problem)

    def encode(v):
        if isinstance(v, Handle):
            return ref(resolve_name(state, v.name))
        if isinstance(v, dict):
            return {k: encode(x) for k, x in v.items()}
        if isinstance(v, list):
            return [encode(x) for x in v]
        if type(v) is float and not math.isfinite(v):
            return {"$num": "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")}
        return v

    ref(root)
    while queue:
        loc = queue.popleft()
        nid = ids[loc]
        obj = state.store[loc]
        if isinstance(obj, Coroutine):
            depth = frame_depth(state, loc)
            frame_refs = []
            for level in range(1, depth + 1):
                fid = fresh_id()
                frame_refs.append({"$ref": fid})
                plain = reify_plain(state, loc, level)
                nodes[fid] = NodeRecord("frame", encode(plain), f"{name(state, loc)}#{level}")
            nodes[nid] = NodeRecord("thread", {"status": obj.status, "depth": float(depth),
                                               "frames": frame_refs}, name(state, loc))
        else:
            kind = TYPE_OF_KIND[state.store.kind(loc)]
            nodes[nid] = NodeRecord(kind, encode(reify_plain(state, loc)), name(state, loc))

    files = []
    for f in state.files:
        fh = state.store[f]
        files.append(FileRecord(fh.path, fh.mode, fh.position))
    return normalize(WireDoc(ids[root], nodes, files))


# -- canonical form ----------------------------------------------------------

def _refs(payload) -> list[str]:
    """Node ids referenced by ``payload`` in canonical (sorted-key) order."""
    out = []
    stack = [payload]
    while stack:
        v = stack.pop()
        if isinstance(v, dict):
            if "$ref" in v and len(v) == 1:
                out.append(v["$ref"])
            else:
                stack.extend(v[k] for k in sorted(v, reverse=True))
        elif isinstance(v, list):
            stack.extend(reversed(v))
    return out


def _rewrite(payload, mapping):
    if isinstance(payload, dict):
        if "$ref" in payload and len(payload) == 1:
            return {"$ref": mapping[payload["$ref"]]}
        return {k: _rewrite(x, mapping) for k, x in payload.items()}
    if isinstance(payload, list):
        return [_rewrite(x, mapping) for x in payload]
    return payload


def normalize(doc: WireDoc) -> WireDoc:
    """Renumber nodes breadth-first from the root and drop unreachable ones."""
    mapping: dict[str, str] = {doc.root: "0"}
    order = [doc.root]
    i = 0
    while i < len(order):
        for r in _refs(doc.nodes[order[i]].payload):
            if r not in mapping:
                mapping[r] = str(len(order))
                order.append(r)
        i += 1
    nodes = {}
    for old in order:
        rec = doc.nodes[old]
        nodes[mapping[old]] = NodeRecord(rec.kind, _rewrite(rec.payload, mapping), rec.origin)
    return WireDoc("0", nodes, list(doc.files), doc.version)


def to_json(doc: WireDoc) -> dict:
    nodes = {}
    for nid, rec in doc.nodes.items():
        entry = {"kind": rec.kind, "payload": rec.payload}
        if rec.origin is not None:
            entry["origin"] = rec.origin
        nodes[nid] = entry
    return {
        "version": doc.version,
        "root": doc.root,
        "nodes": nodes,
        "files": [{"path": f.path, "mode": f.mode, "position": f.position} for f in doc.files],
    }


def serialize(doc: WireDoc) -> bytes:
    return json.dumps(to_json(normalize(doc)), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False).encode("utf-8")


# -- parse and validate ------------------------------------------------------

def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def _check_value(nid: str, fieldname: str, v, nodes) -> None:
    stack = [v]
    while stack:
        x = stack.pop()
        if isinstance(x, dict):
            if "$ref" in x and len(x) == 1:
                if not isinstance(x["$ref"], str) or x["$ref"] not in nodes:
                    raise DanglingRef(str(x["$ref"]))
            elif "$num" in x and len(x) == 1:
                if x["$num"] not in ("inf", "-inf", "nan"):
                    raise SchemaViolation(nid, fieldname, "bad $num")
            else:
                stack.extend(x.values())
        elif isinstance(x, list):
            stack.extend(x)
        elif x is not None and not isinstance(x, (bool, int, float, str)):
            raise SchemaViolation(nid, fieldname, "unexpected JSON value")


def _check_record(nid: str, rec: NodeRecord, nodes=None) -> None:
    if rec.kind not in TYPE_NAMES:
        raise SchemaViolation(nid, "kind", f"unknown kind {rec.kind!r}")
    if not isinstance(rec.payload, dict):
        raise SchemaViolation(nid, "payload", "object expected")
    for key in rec.payload:
        if key not in FIELDS[rec.kind]:
            raise SchemaViolation(nid, key, f"not a field of {rec.kind}")
    if rec.origin is not None and not isinstance(rec.origin, str):
        raise SchemaViolation(nid, "origin", "text expected")
    if nodes is not None:
        for key, v in rec.payload.items():
            _check_value(nid, key, v, nodes)
    if rec.kind == "thread":
        p = rec.payload
        if p.get("status") not in (SUSPENDED, DEAD):
            raise SchemaViolation(nid, "status", "suspended or dead expected")
        frames = p.get("frames")
        depth = p.get("depth")
        if not isinstance(frames, list) or not isinstance(depth, (int, float)) \
                or isinstance(depth, bool) or depth != len(frames):
            raise SchemaViolation(nid, "depth", "must equal the number of frames")
        if p["status"] == SUSPENDED and not frames:
            raise SchemaViolation(nid, "frames", "a suspended thread needs frames")
        if nodes is not None:
            for f in frames:
                if not (isinstance(f, dict) and nodes[f["$ref"]].kind == "frame"):
                    raise SchemaViolation(nid, "frames", "frame reference expected")


def deserialize(data: bytes | str) -> WireDoc:
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from None
    else:
        text = data
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.pos) from None
    except (ValueError, RecursionError) as exc:
        raise ParseError(str(exc), 0) from None
    if not isinstance(raw, dict) or set(raw) != {"version", "root", "nodes", "files"}:
        raise ParseError("not a dump document", 0)
    if raw["version"] != WIRE_VERSION:
        raise ParseError(f"unsupported dump version {raw['version']!r}", 0)
    if not isinstance(raw["nodes"], dict) or not isinstance(raw["files"], list):
        raise ParseError("malformed dump document", 0)
    nodes: dict[str, NodeRecord] = {}
    for nid, entry in raw["nodes"].items():
        if not isinstance(entry, dict) or not {"kind", "payload"} <= set(entry) \
                or not set(entry) <= {"kind", "payload", "origin"}:
            raise SchemaViolation(nid, "record", "kind/payload/origin expected")
        nodes[nid] = NodeRecord(entry["kind"], entry["payload"], entry.get("origin"))
    if not isinstance(raw["root"], str) or raw["root"] not in nodes:
        raise DanglingRef(str(raw["root"]))
    for nid, rec in nodes.items():
        _check_record(nid, rec, nodes)
    files = []
    for i, f in enumerate(raw["files"]):
        ok = (isinstance(f, dict) and set(f) == {"path", "mode", "position"}
              and isinstance(f["path"], str) and f["mode"] in MODES
              and isinstance(f["position"], int) and not isinstance(f["position"], bool)
              and f["position"] >= 0)
        if not ok:
            raise SchemaViolation(f"files[{i}]", "file", "path/mode/position expected")
        files.append(FileRecord(f["path"], f["mode"], f["position"]))
    return WireDoc(raw["root"], nodes, files, raw["version"])


# -- instantiate -------------------------------------------------------------

def _decode(v, resolve):
    if isinstance(v, dict):
        if "$ref" in v and len(v) == 1:
            return resolve(v["$ref"])
        if "$num" in v and len(v) == 1:
            return float(v["$num"])
        return {k: _decode(x, resolve) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode(x, resolve) for x in v]
    if type(v) is int:
        return float(v)
    return v


def _placeholder(state: MachineState, kind: str) -> Loc:
    store = state.store
    if kind == "table":
        return store.alloc(Table())
    if kind == "env":
        return store.alloc(Env())
    if kind == "proto":
        return store.alloc(Proto("_", ()))
    if kind == "function":
        return store.alloc(Closure(store.alloc(Proto("_", ())), store.alloc(Env())))
    raise UnfulfilledPromise(f"no placeholder for {kind} nodes")


def instantiate(state: MachineState, doc: WireDoc, into: Loc | None = None,
                names: dict | None = None) -> Loc:
    """Rebuild the dump inside ``state``; returns the root value.

    Values are installed bottom-up.  A reference that closes a cycle gets a
    placeholder of the right kind, which is filled in once its node is built.
    When ``into`` is given, the root thread's frames are pushed onto that
    existing coroutine instead of a new one.  ``names`` (if given) collects
    origin name -> new location.
    """
    nodes = doc.nodes
    locs: dict[str, Loc] = {}
    promises: dict[str, Loc] = {}
    threads: deque[tuple[str, Loc]] = deque()

    def start_thread(nid: str) -> Loc:
        loc = into if (into is not None and nid == doc.root) else newthread(state)
        threads.append((nid, loc))
        return loc

    def lookup(cid: str) -> Loc:
        loc = locs.get(cid)
        if loc is not None:
            return loc
        if cid not in promises:
            promises[cid] = _placeholder(state, nodes[cid].kind)
        return promises[cid]

    def finish(nid: str, plain: dict) -> None:
        kind = nodes[nid].kind
        if kind == "file":
            rec = FileRecord(plain["path"], plain["mode"], int(plain["position"]))
            restore_file(rec, state.file_root).close()
            loc = state.store.alloc(FileHandle(rec.path, REMAP.get(rec.mode, rec.mode), rec.position))
            state.files.append(loc)
        else:
            loc = install_plain(state, plain, kind, into=promises.pop(nid, None))
        locs[nid] = loc

    def materialize(start: str) -> Loc:
        if start in locs:
            return locs[start]
        stack = [(start, False)]
        onpath: set[str] = set()
        while stack:
            nid, post = stack.pop()
            if post:
                onpath.discard(nid)
                finish(nid, _decode(nodes[nid].payload, lookup))
                continue
            if nid in locs or nid in onpath:
                continue
            rec = nodes[nid]
            if rec.kind == "thread":
                locs[nid] = start_thread(nid)
                continue
            if rec.kind == "frame":
                raise SchemaViolation(nid, "kind", "frame referenced outside a thread")
            onpath.add(nid)
            stack.append((nid, True))
            for child in _refs(rec.payload):
                if child not in locs and child not in onpath:
                    stack.append((child, False))
        return locs[start] if start in locs else lookup(start)

    root = materialize(doc.root)
    while threads:
        nid, loc = threads.popleft()
        payload = nodes[nid].payload
        for fref in reversed(payload["frames"]):
            plain = _decode(nodes[fref["$ref"]].payload, materialize)
            plain.pop("resumable", None)
            install_frame(state, loc, plain, 0)
        if frame_depth(state, loc) or payload["status"] == DEAD:
            setstatus(state, loc, payload["status"])
    if promises:
        raise UnfulfilledPromise(f"unfulfilled placeholders for nodes {sorted(promises)}")
    if names is not None:
        for nid, loc in locs.items():
            if nodes[nid].origin is not None:
                names[nodes[nid].origin] = loc
    return root


# -- editing -----------------------------------------------------------------

def drop_bindings(doc: WireDoc, variables) -> WireDoc:
    """Copy of ``doc`` with the named variables set to nil in every environment.

    Values that become unreachable are pruned from the dump.
    """
    wanted = set(variables)
    nodes = {}
    for nid, rec in doc.nodes.items():
        payload = rec.payload
        if rec.kind == "env":
            payload = dict(payload)
            payload["bindings"] = [[k, None if k in wanted else v]
                                   for k, v in payload.get("bindings", [])]
        nodes[nid] = NodeRecord(rec.kind, payload, rec.origin)
    return normalize(WireDoc(doc.root, nodes, list(doc.files), doc.version))
