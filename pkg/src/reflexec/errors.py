"""Exception hierarchy.

Machine-level failures carry the transition rule that rejected the step so
that callers can report where a computation went wrong.
"""

from __future__ import annotations


class ReflexecError(Exception):
    pass


class MachineError(ReflexecError):
    rule: str | None = None

    def __init__(self, message: str, rule: str | None = None):
        super().__init__(message)
        if rule is not None:
            self.rule = rule


class UnknownVariable(MachineError):
    rule = "8"

    def __init__(self, name: str, rule: str | None = None):
        super().__init__(f"unknown variable {name!r}", rule)
        self.name = name


class MachineTypeError(MachineError):
    rule = "9"

    def __init__(self, op: str, operands, rule: str | None = None):
        shown = ", ".join(_short(v) for v in operands)
        super().__init__(f"{op}: bad operand types ({shown})", rule)
        self.op = op
        self.operands = tuple(operands)


class NotAClosure(MachineTypeError):
    rule = "11"


class StackUnderflow(MachineError):
    pass


class ResumeNonSuspended(MachineError):
    rule = "15"

    def __init__(self, coro, status: str):
        super().__init__(f"cannot resume {coro!r}: coroutine is {status}")
        self.coro = coro
        self.status = status


class EmptyCoroutine(MachineError):
    rule = "15"

    def __init__(self, coro):
        super().__init__(f"cannot resume {coro!r}: coroutine has no frames")
        self.coro = coro


class YieldFromRoot(MachineError):
    rule = "16"

    def __init__(self):
        super().__init__("yield outside of any resumed coroutine")


class FuelExhausted(MachineError):
    def __init__(self, fuel: int):
        super().__init__(f"step budget of {fuel} exhausted")
        self.fuel = fuel


# reflection

class ReflectError(MachineError):
    pass


class ReifyAtomic(ReflectError):
    rule = "20"


class ReifyRunning(ReflectError):
    rule = "20"


class NameOfAtomic(ReflectError):
    pass


class ShapeMismatch(ReflectError):
    rule = "21"

    def __init__(self, field: str, detail: str = ""):
        msg = f"representation field {field!r} has the wrong shape"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.field = field


class UnresolvedHandle(ReflectError):
    rule = "21"

    def __init__(self, name: str):
        super().__init__(f"handle {name!r} does not resolve on this machine")
        self.name = name


class InstallIntoRunning(ReflectError):
    rule = "21"


class BadLevel(ReflectError):
    rule = "21"


class UnknownTypeName(ReflectError):
    pass


class SetStatusRunning(ReflectError):
    pass


class SuspendedWithoutFrames(ReflectError):
    pass


# host files

class HostOpenFailure(MachineError):
    def __init__(self, path: str, mode: str, reason: str = ""):
        super().__init__(f"cannot open {path!r} in mode {mode!r}" + (f": {reason}" if reason else ""))
        self.path = path
        self.mode = mode


class SeekBeyondEnd(MachineError):
    def __init__(self, path: str, position: int, size: int):
        super().__init__(f"{path!r}: position {position} is past end of file ({size} bytes)")
        self.path = path
        self.position = position


# wire format

class PickleError(ReflexecError):
    pass


class NonSerializable(PickleError):
    def __init__(self, name: str, kind: str, reason: str = ""):
        super().__init__(f"cannot serialize {kind} {name}" + (f": {reason}" if reason else ""))
        self.name = name
        self.kind = kind


class ParseError(PickleError):
    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DanglingRef(PickleError):
    def __init__(self, node_id: str):
        super().__init__(f"reference to missing node {node_id!r}")
        self.node_id = node_id


class SchemaViolation(PickleError):
    def __init__(self, node_id: str, field: str, detail: str = ""):
        super().__init__(f"node {node_id!r}: bad field {field!r}" + (f" ({detail})" if detail else ""))
        self.node_id = node_id
        self.field = field


class UnfulfilledPromise(PickleError):
    pass


# front end

class CompileError(ReflexecError):
    def __init__(self, message: str, span: tuple[int, int]):
        super().__init__(f"{message} at {span[0]}..{span[1]}")
        self.span = span


class SexpSyntaxError(CompileError):
    def __init__(self, span: tuple[int, int], expected: str):
        super().__init__(f"syntax error: expected {expected}", span)
        self.expected = expected


class UnknownForm(CompileError):
    pass


class ArityError(CompileError):
    pass


# harness / network

class HarnessError(ReflexecError):
    pass


class NeverYielded(HarnessError):
    pass


class MissingFile(HarnessError):
    def __init__(self, path: str):
        super().__init__(f"missing transferred file {path!r}")
        self.path = path


class ProtocolError(ReflexecError):
    pass


class ConnectionFailure(ProtocolError):
    pass


def _short(v) -> str:
    text = repr(v)
    return text if len(text) <= 40 else text[:37] + "..."
