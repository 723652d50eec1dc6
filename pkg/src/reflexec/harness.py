"""Driving programs as coroutines: run, checkpoint at a yield, restore.

A program file is a sequence of top-level forms whose last value is the main
closure.  The harness boots the file on a fresh machine, wraps the main
closure in a coroutine and resumes it: first with the program argument, then
with nil after every yield that reaches the driver.  Only that coroutine is
ever captured; the driver loop stays behind on the machine that runs it.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import HarnessError, MissingFile, NeverYielded
from .files import host_path
from .lang import compile_source, load_unit
from .machine import (
    DEAD, Coroutine, Halted, MachineState, Suspended, create, frame_depth, resume, run,
)
from .pickling import FAIL, ErrorPolicy, WireDoc, deep_capture, deserialize, instantiate, serialize
from .values import Loc, Table

BUNDLED = ("inc", "count", "factorial", "fibonacci", "myprint", "knn_lite")


def clock_ms() -> float:
    return time.process_time() * 1000.0


@dataclass
class MigrationReport:
    capture_ms: float = 0.0
    store_ms: float = 0.0
    transmit_ms: float = 0.0
    load_ms: float = 0.0
    restore_ms: float = 0.0
    payload_bytes: int = 0
    frame_count: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def program_source(path: str) -> str:
    """Source text of ``path``, or of a bundled program given by bare name."""
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8")
    stem = p.name[:-5] if p.name.endswith(".sexp") else p.name
    if p.parent == Path(".") and stem in BUNDLED:
        return bundled_source(stem)
    raise FileNotFoundError(path)


def bundled_source(stem: str) -> str:
    return resources.files(__package__).joinpath("programs").joinpath(f"{stem}.sexp").read_text("utf-8")


def parse_arg(text: str):
    """Command-line word to a machine atom."""
    if text in ("true", "false"):
        return text == "true"
    if text == "nil":
        return None
    try:
        return float(text)
    except ValueError:
        return text


def program_arg(state: MachineState, words):
    """No words give nil, one word an atom, several a sequence table."""
    if not words:
        return None
    values = [w if not isinstance(w, str) else parse_arg(w) for w in words]
    if len(values) == 1:
        return values[0]
    return state.store.alloc(Table.from_sequence(values))


@dataclass
class Session:
    """A program coroutine plus the driver state around it."""

    state: MachineState
    co: Loc
    pending: object = None
    fuel: int | None = None
    yields: list = field(default_factory=list)
    done: bool = False
    value: object = None

    @classmethod
    def boot(cls, source: str, args=(), *, file_root: str = ".", fuel: int | None = None,
             tag: str | None = None, prelude: bool = True) -> Session:
        unit = compile_source(source, prelude=prelude)
        state = MachineState.fresh(harness=True, file_root=file_root, tag=tag)
        locs = load_unit(state, unit)
        root = state.A[0].frame
        root.code = state.store[locs[unit.root]].code
        result = run(state, fuel)
        if not isinstance(result, Halted):
            raise HarnessError("program yielded while loading its definitions")
        root.S.clear()
        root.code, root.pc = (), 0
        co = create(state, result.value)
        return cls(state, co, program_arg(state, list(args)), fuel)

    @classmethod
    def restore(cls, doc: WireDoc, *, file_root: str = ".", fuel: int | None = None,
                tag: str | None = None) -> Session:
        for rec in doc.files:
            if not host_path(file_root, rec.path).exists():
                raise MissingFile(rec.path)
        state = MachineState.fresh(harness=True, file_root=file_root, tag=tag)
        co = instantiate(state, doc)
        session = cls(state, co, None, fuel)
        if state.store[co].status == DEAD:
            session.done = True
        return session

    @property
    def output(self) -> list[str]:
        return self.state.output

    def advance(self) -> bool:
        """Resume until the next yield reaches the driver; False once finished."""
        if self.done:
            return False
        arg, self.pending = self.pending, None
        resume(self.state, self.co, arg)
        result = run(self.state, self.fuel)
        if isinstance(result, Suspended):
            self.yields.append(self.state.A[0].frame.S.pop())
            return True
        self.state.A[0].frame.S.clear()
        self.done = True
        self.value = result.value
        return False

    def run_to_yield(self, k: int) -> None:
        """Drive until the ``k``-th yield (counted from boot) has happened."""
        while len(self.yields) < k:
            if not self.advance():
                raise NeverYielded(
                    f"program finished after {len(self.yields)} yield(s), before yield {k}")

    def finish(self):
        while self.advance():
            pass
        return self.value

    def depth(self) -> int:
        return frame_depth(self.state, self.co)

    def capture(self, policy: ErrorPolicy = FAIL) -> WireDoc:
        return deep_capture(self.state, self.co, policy)


@dataclass
class Checkpoint:
    data: bytes
    doc: WireDoc
    report: MigrationReport
    output: list[str]


def checkpoint(session: Session, at_yield: int, policy: ErrorPolicy = FAIL, edit=None) -> Checkpoint:
    """Drive ``session`` to its ``at_yield``-th yield and serialize the program coroutine.

    ``edit`` may rewrite the captured document before it is serialized.
    """
    session.run_to_yield(at_yield)
    report = MigrationReport(frame_count=session.depth())
    t0 = clock_ms()
    doc = session.capture(policy)
    if edit is not None:
        doc = edit(doc)
    t1 = clock_ms()
    data = serialize(doc)
    t2 = clock_ms()
    report.capture_ms, report.store_ms = t1 - t0, t2 - t1
    report.payload_bytes = len(data)
    return Checkpoint(data, doc, report, list(session.output))


def restore(data: bytes, *, file_root: str = ".", fuel: int | None = None,
            report: MigrationReport | None = None) -> Session:
    """Parse a dump and rebuild its coroutine on a fresh machine."""
    t0 = clock_ms()
    doc = deserialize(data)
    t1 = clock_ms()
    session = Session.restore(doc, file_root=file_root, fuel=fuel)
    t2 = clock_ms()
    if report is not None:
        report.load_ms, report.restore_ms = t1 - t0, t2 - t1
        report.payload_bytes = len(data)
        report.frame_count = session.depth()
    return session


def run_program(source: str, args=(), *, file_root: str = ".", fuel: int | None = None):
    """Uninterrupted run; returns ``(output, final value, yielded values)``."""
    session = Session.boot(source, args, file_root=file_root, fuel=fuel)
    value = session.finish()
    return list(session.output), value, list(session.yields)


def describe(session: Session, value) -> str:
    """Printable final value (structured values show their kind)."""
    from .values import display

    if isinstance(value, Loc):
        obj = session.state.store[value]
        if isinstance(obj, Coroutine):
            return f"<thread {obj.status}>"
        return f"<{type(obj).__name__.lower()}>"
    return display(value)
