"""Static SVG charts. Deterministic output: fixed hash salt, no date stamp."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "streamyolo"


def _save(fig, path: Path, tag: str) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Title": tag})
    plt.close(fig)


def memory_bars(path: Path, shares_bits: dict[str, int], tag: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    names = list(shares_bits)
    vals = [shares_bits[n] / 1e6 for n in names]
    ax.bar(names, vals, color=["#4c72b0", "#55a868", "#c44e52"][: len(names)])
    ax.set_ylabel("on-chip memory (Mbit)")
    ax.set_title("memory breakdown")
    _save(fig, path, tag)


def latency_bars(path: Path, node_latency: dict[str, float], tag: str = "") -> None:
    names = list(node_latency)
    fig, ax = plt.subplots(figsize=(max(5, 0.12 * len(names)), 3))
    ax.bar(range(len(names)), [node_latency[n] * 1e3 for n in names], color="#4c72b0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=5)
    ax.set_ylabel("latency (ms)")
    ax.set_title("per-node latency")
    _save(fig, path, tag)


def ablation_chart(path: Path, k: Sequence[int], mem_skip: Sequence[float], mem_total: Sequence[float],
                   bw: Sequence[float], tag: str = "") -> None:
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    a.plot(k, [m / 1e6 for m in mem_total], "o-", label="total")
    a.plot(k, [m / 1e6 for m in mem_skip], "s-", label="skip buffers")
    a.set_xlabel("buffers moved off-chip")
    a.set_ylabel("on-chip memory (Mbit)")
    a.legend()
    b.plot(k, [x / 1e9 for x in bw], "o-", color="#c44e52")
    b.set_xlabel("buffers moved off-chip")
    b.set_ylabel("off-chip bandwidth (Gbit/s)")
    _save(fig, path, tag)
