"""PNG figures for the bench report (rendered off-screen)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_payload(rows: list[dict], path) -> Path:
    depths = [r["depth"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(depths, [r["payload_bytes"] / 1024 for r in rows], marker="o")
    ax.set_xlabel("factorial argument (recursion depth)")
    ax.set_ylabel("dump size (KiB)")
    ax.set_title("Dump size against stack depth")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_timings(rows: list[dict], path) -> Path:
    depths = [r["depth"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("capture_ms", "capture"), ("store_ms", "store"),
                       ("load_ms", "load"), ("restore_ms", "restore")):
        # log axis: clamp zero readings from a coarse clock
        ax.plot(depths, [max(r[key], 1e-3) for r in rows], marker="o", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("factorial argument (recursion depth)")
    ax.set_ylabel("CPU time (ms)")
    ax.set_title("Capture and restore cost against stack depth")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
