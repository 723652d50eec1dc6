"""Acceptance criteria, one test per criterion, each under its time limit.

Run on its own with ``pytest tests/test_acceptance.py`` (a PASS/FAIL line per
criterion is printed at the end) or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import copy
import os
import random
import shutil
import socket
import sys
import time
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflexec.harness import Session, bundled_source, checkpoint, restore, run_program
from reflexec.instructions import Ap
from reflexec.lang import compile_source, load_unit
from reflexec.machine import Closure, Coroutine, Env, FileHandle, MachineState, Proto, newthread, run
from reflexec.net import MAGIC, VERSION, BackgroundServer, NodeConfig, migrate
from reflexec.pickling import deep_capture, deserialize, drop_bindings, instantiate, serialize
from reflexec.reflect import (
    canonical, install, install_plain, name, plain_to_table, reify_plain, type_name_of,
)
from reflexec.report import linearity, scaling_rows
from reflexec.values import Loc, Table

from strategies import suspending_program, value_graph


class Budget:
    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, limit {self.seconds} s"


def run_source(source: str, prelude: bool = False):
    unit = compile_source(source, prelude=prelude)
    state = MachineState.fresh()
    locs = load_unit(state, unit)
    state.A[0].frame.code = state.store[locs[unit.root]].code
    return state, run(state)


# -- 1 -----------------------------------------------------------------------

INC_ROUND_TRIP = """
(define inc (lambda (counter) (+ counter 1)))
(define rf (reify inc))
(define rp (reify (get rf "p")))
(define np (install rp "proto"))
(put rf "p" np)
(define newinc (install rf "function"))
(newinc 1)
"""


def test_criterion_01_inc_round_trip():
    with Budget(1.0):
        # in-language route: the reify/install instructions
        state, result = run_source(INC_ROUND_TRIP)
        assert result.value == 2.0 and type(result.value) is float

        # host route: the library calls, checking the rebuilt pieces are new
        state, result = run_source("(lambda (counter) (+ counter 1))")
        inc = result.value
        rf = reify_plain(state, inc)
        rp = reify_plain(state, rf["p"])
        new_proto = install_plain(state, rp, "proto")
        new_inc = install_plain(state, {**rf, "p": new_proto}, "function")
        assert new_proto != state.store[inc].proto and new_inc != inc
        frame = state.A[0].frame
        frame.S[:] = [new_inc, 1.0]
        frame.code, frame.pc = (Ap(),), 0
        assert run(state).value == 2.0


# -- 2 -----------------------------------------------------------------------

COUNT_REBUILD = """
(define count
  (lambda (_)
    (define i 1)
    (while (< i 6)
      (print (concat "Number " i))
      (yield i)
      (set! i (+ i 1)))))
(define co (create count))
(define v 0)
(while (< v 3) (set! v (resume co)))
(define depth (get (reify co) "depth"))
(define frames (table))
(define l 1)
(while (< l (+ depth 1))
  (put frames l (reify co l))
  (set! l (+ l 1)))
(define nco (newthread))
(set! l depth)
(while (< 0 l)
  (install (get frames l) nco 0)
  (set! l (- l 1)))
(setstatus nco "suspended")
(define next (resume nco))
(print (concat "resumed " next))
(resume nco)
next
"""


def test_criterion_02_count_continuation():
    with Budget(1.0):
        # in-language: capture at 3, rebuild with newthread + level-0 installs + setstatus
        state, result = run_source(COUNT_REBUILD)
        assert result.value == 4.0
        assert state.output == ["Number 1", "Number 2", "Number 3", "Number 4",
                                "resumed 4", "Number 5"]

        # through the dump: checkpoint at the yield of 3, restore elsewhere
        session = Session.boot(bundled_source("count"))
        cp = checkpoint(session, 3)
        assert session.yields[-1] == 3.0
        assert cp.output == ["Number 1", "Number 2", "Number 3"]
        restored = restore(cp.data)
        assert restored.advance() and restored.yields == [4.0]
        restored.finish()
        assert restored.output == ["Number 4", "Number 5"]


# -- 3 -----------------------------------------------------------------------

def _without_resumable(rep: dict) -> dict:
    return {k: v for k, v in rep.items() if k != "resumable"}


@settings(max_examples=500)
@given(suspending_program(), st.data())
def _symmetry_case(program, data):
    source, n_yields = program
    k = data.draw(st.integers(1, n_yields), label="yield index")
    arg = data.draw(st.integers(-4, 4), label="argument")
    session = Session.boot(source, [str(arg)], prelude=False)
    session.run_to_yield(k)
    reference = copy.deepcopy(session)
    expected_value = reference.finish()
    state, co = session.state, session.co
    depth = session.depth()
    assert 1 <= depth <= 10

    for level in range(1, depth + 1):
        rep = reify_plain(state, co, level)
        before = canonical(rep)
        install(state, _without_resumable(rep), co, level)
        assert canonical(reify_plain(state, co, level)) == before

        # reify(install(rep)) = rep up to renaming, via a fresh coroutine
        fresh = newthread(state)
        install(state, plain_to_table(state, _without_resumable(rep)), fresh, 0)
        again = reify_plain(state, fresh, 1)
        assert canonical(_without_resumable(again), rename=True) == \
            canonical(_without_resumable(rep), rename=True)

        # and for every structured value the frame's environment holds
        env = state.store[state.store[co].frame.chain()[level - 1].E]
        for cell in env.bindings.values():
            value = state.store[cell].value
            if isinstance(value, Loc) and not isinstance(state.store[value], Coroutine):
                kind = type_name_of(state, value)
                original = reify_plain(state, value)
                copy_loc = install_plain(state, original, kind)
                assert canonical(reify_plain(state, copy_loc), rename=True) == \
                    canonical(original, rename=True)

    value = session.finish()
    assert session.output == reference.output
    assert value == expected_value


def test_criterion_03_symmetry():
    with Budget(60.0):
        _symmetry_case()


# -- 4 -----------------------------------------------------------------------

PROGRAMS = [("inc", ["1"]), ("count", []), ("factorial", ["10"]), ("fibonacci", ["12"]),
            ("myprint", ["3"]), ("knn_lite", [])]


def test_criterion_04_migration_transparency(tmp_path):
    with Budget(60.0):
        checked = 0
        for prog, args in PROGRAMS:
            source = bundled_source(prog)
            base = tmp_path / prog / "base"
            base.mkdir(parents=True)
            out, value, yields = run_program(source, args, file_root=str(base))
            for k in range(1, len(yields) + 1):
                here = tmp_path / prog / f"k{k}-src"
                there = tmp_path / prog / f"k{k}-dst"
                here.mkdir()
                there.mkdir()
                cp = checkpoint(Session.boot(source, args, file_root=str(here)), k)
                data = serialize(deserialize(cp.data))
                assert data == cp.data
                for rec in cp.doc.files:
                    shutil.copy(here / rec.path, there / rec.path)
                resumed = Session.restore(deserialize(data), file_root=str(there))
                final = resumed.finish()
                assert cp.output + resumed.output == out, (prog, k)
                assert final == value, (prog, k)
                for f in os.listdir(base):
                    assert (there / f).read_bytes() == (base / f).read_bytes()
                checked += 1
        assert checked == 5 + 1 + 1 + 3 + 1


# -- 5 -----------------------------------------------------------------------

def test_criterion_05_scaling_shape():
    with Budget(30.0):
        rows = scaling_rows(range(5, 55, 5))
        sizes = [r["payload_bytes"] for r in rows]
        lin = linearity(rows)
        assert all(b > a for a, b in zip(sizes, sizes[1:])), sizes
        median = lin["median"]
        for d in lin["diffs"]:
            assert abs(d - median) <= 0.25 * median, (lin["diffs"], median)
        assert [r["result"] for r in rows] == [_float_factorial(n) for n in range(5, 55, 5)]


def _float_factorial(n: int) -> float:
    # machine numbers are doubles; multiply in the recursion's order (innermost first)
    acc = 1.0
    for i in range(1, n + 1):
        acc = float(i) * acc
    return acc


# -- 6 -----------------------------------------------------------------------

def test_criterion_06_prototype_dedup():
    with Budget(30.0):
        source = bundled_source("fibonacci")
        for n in range(2, 26, 3):
            session = Session.boot(source, [str(n)])
            cp = checkpoint(session, 1)
            protos = [rec for rec in cp.doc.nodes.values() if rec.kind == "proto"]
            assert len(protos) == 1, n
            assert protos[0].payload["param"] == "n"
            assert cp.report.frame_count == n + 1
            assert restore(cp.data).finish() == float(_fib(n))


def _fib(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


# -- 7 -----------------------------------------------------------------------

def _reachable(state, root) -> set:
    """Independent walk over the store objects themselves."""
    seen, todo = set(), deque([root])
    while todo:
        loc = todo.popleft()
        if loc in seen:
            continue
        seen.add(loc)
        obj = state.store[loc]
        refs = []
        if isinstance(obj, Table):
            for k, v in obj.items():
                refs += [k, v]
        elif isinstance(obj, Env):
            refs += [state.store[c].value for c in obj.bindings.values()] + [obj.parent]
        elif isinstance(obj, Closure):
            refs += [obj.proto, obj.env]
        elif isinstance(obj, Proto):
            refs += list(obj.inner)
        todo.extend(r for r in refs if isinstance(r, Loc))
    return seen


def _correspondence(s1, r1, s2, r2) -> dict:
    """Walk both graphs in lock step; returns the original -> restored map."""
    fwd, back = {}, {}
    todo = deque([(r1, r2)])
    while todo:
        a, b = todo.popleft()
        if a in fwd:
            assert fwd[a] == b, "one value restored twice"
            continue
        assert b not in back, "two values merged"
        fwd[a], back[b] = b, a
        x, y = s1.store[a], s2.store[b]
        assert type(x) is type(y)
        pairs = []
        if isinstance(x, Table):
            assert set(map(repr, x.keys())) == set(map(repr, y.keys()))
            pairs = [(v, y.get(k)) for k, v in x.items()]
        elif isinstance(x, Env):
            assert set(x.bindings) == set(y.bindings)
            pairs = [(s1.store[c].value, s2.store[y.bindings[n]].value) for n, c in x.bindings.items()]
            pairs.append((x.parent, y.parent))
        elif isinstance(x, Closure):
            pairs = [(x.proto, y.proto), (x.env, y.env)]
        elif isinstance(x, Proto):
            assert x.param == y.param and len(x.code) == len(y.code)
        for u, v in pairs:
            if isinstance(u, Loc):
                todo.append((u, v))
            else:
                assert type(u) is type(v) and u == v
    return fwd


@settings(max_examples=500, deadline=5000)
@given(value_graph())
def _sharing_case(build):
    state = MachineState.fresh()
    root, nodes = build(state)
    doc = deserialize(serialize(deep_capture(state, root)))
    assert len(doc.nodes) == len(_reachable(state, root))

    target = MachineState.fresh()
    new_root = instantiate(target, doc)
    mapping = _correspondence(state, root, target, new_root)
    assert len(mapping) == len(doc.nodes)

    # aliasing: a table reached along two paths is the same restored table
    counts = {}
    for loc in _reachable(state, root):
        obj = state.store[loc]
        if isinstance(obj, Table):
            for _, v in obj.items():
                if isinstance(v, Loc):
                    counts[v] = counts.get(v, 0) + 1
    for shared, c in counts.items():
        if c > 1 and isinstance(state.store[shared], Table):
            restored = target.store[mapping[shared]]
            restored.set("probe", "seen")
            holders = [mapping[l] for l in mapping if isinstance(state.store[l], Table)
                       and shared in [v for _, v in state.store[l].items()]]
            for h in holders:
                via = [v for _, v in target.store[h].items() if v == mapping[shared]]
                assert via and target.store[via[0]].get("probe") == "seen"
            break


def test_criterion_07_sharing_and_cycles():
    with Budget(60.0):
        _sharing_case()
        state = MachineState.fresh()
        t = state.store.alloc(Table())
        state.store[t].set(1.0, t)
        doc = deserialize(serialize(deep_capture(state, t)))
        assert len(doc.nodes) == 1
        target = MachineState.fresh()
        t2 = instantiate(target, doc)
        assert target.store[t2].get(1.0) == t2
        assert name(target, target.store[t2].get(1.0)) == name(target, t2)


# -- 8 -----------------------------------------------------------------------

WRITER = """
(lambda (_)
  (define f (open "log.txt" "w"))
  (write f "alpha\\n")
  (write f "beta\\n")
  (yield 1)
  (write f "gamma\\n")
  (close f)
  "done")
"""


def test_criterion_08_file_restore(tmp_path):
    with Budget(5.0):
        for source in (WRITER, bundled_source("knn_lite")):
            base, src, dst = (tmp_path / d for d in ("base", "src", "dst"))
            for d in (base, src, dst):
                shutil.rmtree(d, ignore_errors=True)
                d.mkdir()
            out, value, _ = run_program(source, file_root=str(base))
            session = Session.boot(source, file_root=str(src))
            cp = checkpoint(session, 1)
            (rec,) = cp.doc.files
            p = (src / rec.path).stat().st_size
            assert rec.mode == "w" and rec.position == p > 0
            shutil.copy(src / rec.path, dst / rec.path)
            resumed = restore(cp.data, file_root=str(dst))
            fh = resumed.state.store[resumed.state.files[0]]
            assert isinstance(fh, FileHandle) and fh.mode == "r+" and fh.position == p
            assert resumed.finish() == value
            assert cp.output + resumed.output == out
            assert (dst / rec.path).read_bytes() == (base / rec.path).read_bytes()


# -- 9 -----------------------------------------------------------------------

def test_criterion_09_representation_editing():
    with Budget(5.0):
        source = bundled_source("myprint")
        out, value, _ = run_program(source, ["3"])
        full = checkpoint(Session.boot(source, ["3"]), 1)
        edited = checkpoint(Session.boot(source, ["3"]), 1, edit=lambda d: drop_bindings(d, ["a"]))
        assert edited.report.payload_bytes < full.report.payload_bytes
        assert edited.doc.count("table") < full.doc.count("table")
        for cp in (full, edited):
            resumed = restore(cp.data)
            assert resumed.finish() == value
            assert cp.output + resumed.output == out


# -- 10 ----------------------------------------------------------------------

def test_criterion_10_loopback_migration(tmp_path):
    with Budget(30.0):
        _, local_value, _ = run_program(bundled_source("fibonacci"), ["20"])
        assert local_value == 6765.0
        with BackgroundServer(NodeConfig(root=str(tmp_path))) as server:
            result = migrate(Session.boot(bundled_source("fibonacci"), ["20"]), server.address)
            assert result.reply["ok"] and result.reply["value"] == "6765"
            assert result.report.payload_bytes > 0 and result.report.transmit_ms >= 0

            rng = random.Random(20)
            for i in range(200):
                if i % 4 == 0:
                    blob = MAGIC + bytes([VERSION]) + rng.randbytes(rng.randint(0, 64))
                elif i % 4 == 1:
                    body = rng.randbytes(rng.randint(0, 64))
                    blob = MAGIC + bytes([VERSION]) + len(body).to_bytes(8, "big") + body
                else:
                    blob = rng.randbytes(rng.randint(0, 128))
                with socket.create_connection(server.address, timeout=5) as conn:
                    try:
                        conn.sendall(blob)
                        conn.shutdown(socket.SHUT_WR)
                    except OSError:
                        pass  # the server may reject a prefix before we finish sending
                    reply = conn.recv(1 << 16)
                assert reply.startswith(MAGIC) and b'"ok": false' in reply
                assert server.alive
            again = migrate(Session.boot(bundled_source("fibonacci"), ["20"]), server.address)
            assert again.reply["value"] == "6765"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
