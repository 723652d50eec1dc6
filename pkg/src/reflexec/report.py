"""Scaling measurements behind the ``bench`` command.

Each factorial depth is checkpointed at its single yield and restored on a
fresh machine; the rows record payload size, frame count and the four
timings.  The Fibonacci rows count prototype nodes per dump, which should
not depend on the recursion depth.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .harness import MigrationReport, Session, bundled_source, checkpoint, restore

SCALING_FIELDS = ("depth", "frame_count", "payload_bytes", "capture_ms", "store_ms",
                  "load_ms", "restore_ms", "result")
DEDUP_FIELDS = ("n", "frame_count", "proto_nodes", "function_nodes", "payload_bytes")


def scaling_rows(depths=range(5, 55, 5), repeats: int = 1) -> list[dict]:
    source = bundled_source("factorial")
    rows = []
    for depth in depths:
        best = None
        for _ in range(max(1, repeats)):
            cp = checkpoint(Session.boot(source, [str(depth)]), 1)
            rep = cp.report
            after = MigrationReport()
            session = restore(cp.data, report=after)
            result = session.finish()
            row = {
                "depth": depth,
                "frame_count": rep.frame_count,
                "payload_bytes": rep.payload_bytes,
                "capture_ms": rep.capture_ms,
                "store_ms": rep.store_ms,
                "load_ms": after.load_ms,
                "restore_ms": after.restore_ms,
                "result": result,
            }
            # keep the fastest repeat; sizes are identical across repeats
            if best is None or row["capture_ms"] + row["restore_ms"] < best["capture_ms"] + best["restore_ms"]:
                best = row
        rows.append(best)
    return rows


def dedup_rows(ns=(5, 10, 15, 20)) -> list[dict]:
    source = bundled_source("fibonacci")
    rows = []
    for n in ns:
        cp = checkpoint(Session.boot(source, [str(n)]), 1)
        rows.append({
            "n": n,
            "frame_count": cp.report.frame_count,
            "proto_nodes": cp.doc.count("proto"),
            "function_nodes": cp.doc.count("function"),
            "payload_bytes": cp.report.payload_bytes,
        })
    return rows


def to_csv(rows: list[dict], fieldnames, delimiter: str = ",") -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, delimiter=delimiter, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) and k.endswith("_ms") else v)
                         for k, v in row.items()})
    return buf.getvalue()


def linearity(rows: list[dict]) -> dict:
    """Successive payload differences and their spread around the median."""
    sizes = [r["payload_bytes"] for r in rows]
    diffs = [b - a for a, b in zip(sizes, sizes[1:])]
    if not diffs:
        return {"increasing": True, "diffs": [], "median": 0, "max_rel_dev": 0.0}
    ordered = sorted(diffs)
    mid = len(ordered) // 2
    median = ordered[mid] if len(ordered) % 2 else (ordered[mid - 1] + ordered[mid]) / 2
    dev = max(abs(d - median) / median for d in diffs) if median else float("inf")
    return {"increasing": all(d > 0 for d in diffs), "diffs": diffs, "median": median,
            "max_rel_dev": dev}


def write_bench(out_dir: str, depths=range(5, 55, 5), fib_ns=(5, 10, 15, 20),
                repeats: int = 1, figures: bool = True) -> dict:
    """Write CSV files (and PNG figures) into ``out_dir``; returns the paths and rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scaling = scaling_rows(depths, repeats)
    dedup = dedup_rows(fib_ns)
    paths = {
        "scaling_csv": out / "factorial_scaling.csv",
        "dedup_csv": out / "fibonacci_dedup.csv",
    }
    paths["scaling_csv"].write_text(to_csv(scaling, SCALING_FIELDS), encoding="utf-8")
    paths["dedup_csv"].write_text(to_csv(dedup, DEDUP_FIELDS), encoding="utf-8")
    if figures:
        from .plotting import plot_payload, plot_timings

        paths["payload_png"] = plot_payload(scaling, out / "factorial_payload.png")
        paths["timings_png"] = plot_timings(scaling, out / "factorial_timings.png")
    return {"paths": paths, "scaling": scaling, "dedup": dedup, "linearity": linearity(scaling)}
