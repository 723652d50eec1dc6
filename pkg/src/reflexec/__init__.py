"""Reflective SECD machine with first-class coroutines and computation migration.

The package is layered bottom-up:

* :mod:`reflexec.machine` - the abstract machine and its store;
* :mod:`reflexec.reflect` - reify/install of closures, protos, frames, coroutines;
* :mod:`reflexec.pickling` - deep capture and canonical dumps;
* :mod:`reflexec.lang` - S-expression front end;
* :mod:`reflexec.harness`, :mod:`reflexec.net`, :mod:`reflexec.cli` - drivers.
"""

from .errors import ReflexecError
from .machine import Halted, MachineState, Suspended, run, step
from .pickling import ErrorPolicy, WireDoc, deep_capture, deserialize, instantiate, serialize
from .reflect import install, name, reify, setstatus

__version__ = "0.1.0"

__all__ = [
    "ErrorPolicy", "Halted", "MachineState", "ReflexecError", "Suspended", "WireDoc",
    "deep_capture", "deserialize", "install", "instantiate", "name", "reify", "run",
    "serialize", "setstatus", "step",
]
