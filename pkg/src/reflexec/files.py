"""Registered host files.

A file handle in the store only records ``(path, mode, position)``; every
read or write reopens the host file and seeks, so machine states stay plain
copyable values.  Paths are relative to the machine's ``file_root``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO

from .errors import HostOpenFailure, MachineTypeError, SeekBeyondEnd
from .values import Loc

MODES = ("r", "w", "a", "r+", "rb", "wb", "ab", "rb+")
REMAP = {"w": "r+", "wb": "rb+"}


@dataclass(frozen=True)
class FileRecord:
    path: str
    mode: str
    position: int


def host_path(root: str, path: str) -> Path:
    return Path(root) / path


def register_open(state, path: str, mode: str) -> Loc:
    from .machine import FileHandle

    if mode not in MODES:
        raise HostOpenFailure(path, mode, "unsupported mode")
    full = host_path(state.file_root, path)
    try:
        with open(full, mode) as fh:
            fh.seek(0, os.SEEK_END)
            end = fh.tell()
    except OSError as exc:
        raise HostOpenFailure(path, mode, exc.strerror or str(exc)) from None
    position = end if mode.startswith("a") else 0
    loc = state.store.alloc(FileHandle(path, mode, position))
    state.files.append(loc)
    return loc


def restore_file(rec: FileRecord, root: str = ".") -> IO:
    """Reopen a captured file at its recorded position.

    Write modes become read/update so the reopened file is not truncated.
    """
    mode = REMAP.get(rec.mode, rec.mode)
    full = host_path(root, rec.path)
    try:
        fh = open(full, mode)
    except OSError as exc:
        raise HostOpenFailure(rec.path, mode, exc.strerror or str(exc)) from None
    size = os.path.getsize(full)
    if rec.position > size:
        fh.close()
        raise SeekBeyondEnd(rec.path, rec.position, size)
    fh.seek(rec.position, os.SEEK_SET)
    return fh


def _handle(state, f, op):
    from .machine import FileHandle

    if isinstance(f, Loc) and isinstance(state.store[f], FileHandle):
        if f not in state.files:
            raise MachineTypeError(op + " (closed file)", [f])
        return state.store[f]
    raise MachineTypeError(op, [f])


def file_write(state, f, text: str) -> None:
    fh = _handle(state, f, "write")
    if fh.mode in ("r", "rb"):
        raise MachineTypeError("write (read-only file)", [f])
    data = text.encode("utf-8")
    full = host_path(state.file_root, fh.path)
    try:
        if fh.mode.startswith("a"):
            with open(full, "ab") as out:
                out.write(data)
                fh.position = out.tell()
        else:
            with open(full, "r+b") as out:
                out.seek(fh.position)
                out.write(data)
                fh.position = out.tell()
    except OSError as exc:
        raise HostOpenFailure(fh.path, fh.mode, exc.strerror or str(exc)) from None


def file_read(state, f, n: int) -> str:
    fh = _handle(state, f, "read")
    if fh.mode in ("w", "wb", "a", "ab"):
        raise MachineTypeError("read (write-only file)", [f])
    full = host_path(state.file_root, fh.path)
    try:
        with open(full, "rb") as src:
            src.seek(fh.position)
            data = src.read(max(n, 0))
            fh.position = src.tell()
    except OSError as exc:
        raise HostOpenFailure(fh.path, fh.mode, exc.strerror or str(exc)) from None
    return data.decode("utf-8", errors="replace")


def file_close(state, f) -> None:
    _handle(state, f, "close")
    state.files.remove(f)
