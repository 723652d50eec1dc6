"""Small helpers shared by the test modules."""

from reflexec.lang import compile_source, load_unit
from reflexec.machine import Halted, MachineState, run, step


def load(source: str, prelude: bool = True, **fresh) -> MachineState:
    """Fresh machine whose root frame is about to run ``source``."""
    unit = compile_source(source, prelude=prelude)
    state = MachineState.fresh(**fresh)
    locs = load_unit(state, unit)
    state.A[0].frame.code = state.store[locs[unit.root]].code
    return state


def evaluate(source: str, prelude: bool = True):
    state = load(source, prelude)
    return run(state).value, state


def step_to_end(state: MachineState, limit: int = 1_000_000):
    for _ in range(limit):
        result = step(state)
        if isinstance(result, Halted):
            return result
    raise AssertionError("no halt within the step limit")
