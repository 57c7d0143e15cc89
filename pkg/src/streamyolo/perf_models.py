"""Analytic latency, DSP, on-chip memory and off-chip bandwidth models."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .graph_ir import JOINS, WINDOWED, NetworkGraph
from .quantizer import QuantConfig

ON, OFF = "on", "off"
BRAM_BITS = 36 * 1024
C_FIX_ARITH = 4
C_FIX_ROUTING = 2
ROUTING = ("Input", "Output", "Split", "Concat", "Resize")


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class PlatformSpec:
    dsp_total: int
    onchip_bits: int
    f_clk: float
    offchip_bw: float
    dma_burst: int = 256
    name: str = ""

    def __post_init__(self):
        for name in ("dsp_total", "onchip_bits", "f_clk", "offchip_bw", "dma_burst"):
            if not getattr(self, name) > 0:
                raise ValueError(f"platform field {name} must be strictly positive")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PlatformSpec":
        known = {"dsp_total", "onchip_bits", "f_clk", "offchip_bw", "dma_burst", "name"}
        missing = {"dsp_total", "onchip_bits", "f_clk", "offchip_bw"} - set(d)
        if missing:
            raise ValueError(f"platform is missing fields {sorted(missing)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def load(cls, path: str | Path) -> "PlatformSpec":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python 3.10
                import tomli as tomllib

            return cls.from_dict(tomllib.loads(text))
        return cls.from_dict(json.loads(text))

    def offchip_words_per_cycle(self, w_a: int) -> float:
        return self.offchip_bw / (self.f_clk * w_a)


def edge_key(edge: tuple[str, str]) -> str:
    return f"{edge[0]}->{edge[1]}"


def parse_edge_key(key: str) -> tuple[str, str]:
    src, sep, dst = key.partition("->")
    if not sep:
        raise ValueError(f"bad edge key {key!r}")
    return src, dst


@dataclass(frozen=True)
class DesignPoint:
    p: Mapping[str, int]
    t_buf: Mapping[tuple[str, str], str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "parallelism": {k: int(v) for k, v in self.p.items()},
            "buffers": {edge_key(e): t for e, t in self.t_buf.items()},
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "DesignPoint":
        p = {k: int(v) for k, v in d.get("parallelism", {}).items()}
        t = {}
        for k, v in d.get("buffers", {}).items():
            if v not in (ON, OFF):
                raise ValueError(f"buffer {k}: placement must be 'on' or 'off'")
            t[parse_edge_key(k)] = v
        return cls(p, t)

    def with_buffers(self, t_buf: Mapping[tuple[str, str], str]) -> "DesignPoint":
        return DesignPoint(dict(self.p), dict(t_buf))


# --------------------------------------------------------------------------
# per-node models
# --------------------------------------------------------------------------

def workload_dims(graph: NetworkGraph, node_id: str) -> tuple[int, int, int, int]:
    """(H, W, C, F) driving the latency model; F = 1 for non-convolutions."""
    node = graph.node(node_id)
    if node.kind == "Resize":
        s = graph.out_shape(node_id)
        return s.h, s.w, s.c, 1
    if node.kind == "Concat":
        s = graph.out_shape(node_id)
        return s.h, s.w, s.c, 1
    s = graph.in_shape(node_id)
    f = node.filters if node.kind == "Convolution" else 1
    return s.h, s.w, s.c, f


def max_parallelism(graph: NetworkGraph, node_id: str) -> int:
    _, _, c, f = workload_dims(graph, node_id)
    return c * f


def valid_parallelism(graph: NetworkGraph, node_id: str) -> list[int]:
    """Divisors of the node's parallelisable workload, ascending."""
    n = max_parallelism(graph, node_id)
    small = [d for d in range(1, int(math.isqrt(n)) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def check_parallelism(graph: NetworkGraph, node_id: str, p: int) -> None:
    n = max_parallelism(graph, node_id)
    if p < 1 or p > n or n % p:
        raise DesignError(f"{node_id}: parallelism {p} must divide its workload dimension {n}")


def node_cycles(graph: NetworkGraph, node_id: str, p: int) -> float:
    h, w, c, f = workload_dims(graph, node_id)
    return h * w * c * f / p


def node_latency(graph: NetworkGraph, node_id: str, p: int, f_clk: float) -> float:
    return node_cycles(graph, node_id, p) / f_clk


def c_fix(kind: str) -> int:
    return C_FIX_ROUTING if kind in ROUTING else C_FIX_ARITH


def pipeline_depth(graph: NetworkGraph, node_id: str, p: int,
                   overrides: Mapping[str, float] | None = None) -> float:
    """Cycles from a node's first input word to its first output word."""
    if overrides and node_id in overrides:
        return overrides[node_id]
    node = graph.node(node_id)
    if node.kind in WINDOWED:
        s = graph.in_shape(node_id)
        k = node.kernel_size
        top, left = node.pads[0], node.pads[1]
        # words up to the first window's bottom-right pixel; top/left padding
        # is synthesised, not waited for
        words = max(1, (k - 1 - top) * s.w + k - left) * s.c
        return math.ceil(words / p) + c_fix(node.kind)
    if node.kind == "Resize":
        s = graph.in_shape(node_id)
        return math.ceil(s.w * s.c / p) + c_fix(node.kind)
    return c_fix(node.kind)


def dsp_usage(kind: str, p: int, kernel_size: int | None = None) -> int:
    if kind == "Convolution":
        return kernel_size * kernel_size * p
    if kind == "HardSwish":
        return 2 * p
    if kind == "LeakyReLU":
        return p
    return 0


def node_dsp(graph: NetworkGraph, node_id: str, p: int) -> int:
    node = graph.node(node_id)
    return dsp_usage(node.kind, p, node.kernel_size)


def total_dsp(graph: NetworkGraph, p: Mapping[str, int]) -> int:
    return sum(node_dsp(graph, n, p[n]) for n in graph.node_ids)


def total_latency_cycles(graph: NetworkGraph, p: Mapping[str, int],
                         overrides: Mapping[str, float] | None = None) -> float:
    bottleneck = max(node_cycles(graph, n, p[n]) for n in graph.node_ids)
    return bottleneck + sum(pipeline_depth(graph, n, p[n], overrides) for n in graph.node_ids)


def total_latency(graph: NetworkGraph, dp: DesignPoint, platform: PlatformSpec,
                  overrides: Mapping[str, float] | None = None) -> float:
    missing = set(graph.node_ids) - set(dp.p)
    if missing:
        raise DesignError(f"design point has no parallelism for {sorted(missing)}")
    return total_latency_cycles(graph, dp.p, overrides) / platform.f_clk


def buffer_bandwidth(size_words: int, placement: str, latency: float, w_a: int) -> float:
    """Off-chip bits/s of one skip buffer: written once and read once per frame."""
    if latency <= 0:
        raise ValueError("latency must be positive")
    return 2 * size_words * w_a / latency if placement == OFF else 0.0


# --------------------------------------------------------------------------
# memory
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryBreakdown:
    weights: int
    window: int
    skip: int
    concat: int  # channel buffers of Concat inputs, counted inside ``window``

    @property
    def total(self) -> int:
        return self.weights + self.window + self.skip

    def shares(self) -> dict[str, float]:
        t = self.total or 1
        return {"weights": self.weights / t, "window": self.window / t, "skip": self.skip / t}


def weight_bits(graph: NetworkGraph, qc: QuantConfig) -> int:
    total = 0
    for n in graph.nodes:
        if n.kind == "Convolution":
            c = graph.in_shape(n.id).c
            total += n.filters * c * n.kernel_size ** 2 * qc.w_w
    return total


def window_bits(graph: NetworkGraph, qc: QuantConfig) -> int:
    total = 0
    for n in graph.nodes:
        if n.kind in WINDOWED:
            s = graph.in_shape(n.id)
            total += (n.kernel_size - 1) * s.w * s.c * qc.w_a
    return total


def concat_bits(graph: NetworkGraph, qc: QuantConfig) -> int:
    return sum(graph.shapes[e].c * qc.w_a for e in graph.edges if graph.node(e[1]).kind == "Concat")


def fixed_onchip_bits(graph: NetworkGraph, qc: QuantConfig) -> int:
    """Weights plus sliding-window and channel buffers: never evicted."""
    return weight_bits(graph, qc) + window_bits(graph, qc) + concat_bits(graph, qc)


def skip_bits(depths: Mapping[tuple[str, str], int], t_buf: Mapping[tuple[str, str], str],
              w_a: int) -> int:
    return sum(q * w_a for e, q in depths.items() if t_buf.get(e, ON) == ON)


def _depth_map(depths) -> Mapping[tuple[str, str], int]:
    return getattr(depths, "q", depths)


def memory_breakdown(graph: NetworkGraph, dp: DesignPoint, qc: QuantConfig, depths) -> MemoryBreakdown:
    q = _depth_map(depths)
    for e in graph.skip_edges():
        if dp.t_buf.get(e, ON) == ON and e not in q:
            raise DesignError(f"no buffer depth for on-chip skip edge {edge_key(e)}")
    cb = concat_bits(graph, qc)
    return MemoryBreakdown(
        weights=weight_bits(graph, qc),
        window=window_bits(graph, qc) + cb,
        skip=skip_bits({e: q[e] for e in graph.skip_edges() if e in q}, dp.t_buf, qc.w_a),
        concat=cb,
    )


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

@dataclass
class PerfReport:
    node_latency: dict[str, float]
    node_depth: dict[str, float]
    node_dsp: dict[str, int]
    total_latency: float
    dsp_used: int
    memory: MemoryBreakdown
    offchip_bw_used: float
    edge_bandwidth: dict[tuple[str, str], float]
    edge_depth: dict[tuple[str, str], int]
    placement: dict[tuple[str, str], str]
    parallelism: dict[str, int]
    kinds: dict[str, str] = field(default_factory=dict)

    @property
    def mem_weights(self) -> int:
        return self.memory.weights

    @property
    def mem_window(self) -> int:
        return self.memory.window

    @property
    def mem_skip(self) -> int:
        return self.memory.skip

    @property
    def mem_total(self) -> int:
        return self.memory.total

    def to_json(self) -> dict:
        m = self.memory
        return {
            "total_latency_s": self.total_latency,
            "dsp_used": self.dsp_used,
            "memory_bits": {
                "weights": m.weights, "window": m.window, "skip": m.skip,
                "concat_buffers": m.concat, "total": m.total,
            },
            "memory_shares": m.shares(),
            "bram36_estimate": {
                "weights": math.ceil(m.weights / BRAM_BITS),
                "window": math.ceil(m.window / BRAM_BITS),
                "skip": math.ceil(m.skip / BRAM_BITS),
            },
            "offchip_bw_bps": self.offchip_bw_used,
            "nodes": {
                n: {
                    "kind": self.kinds.get(n, ""),
                    "parallelism": self.parallelism[n],
                    "latency_s": self.node_latency[n],
                    "depth_cycles": self.node_depth[n],
                    "dsp": self.node_dsp[n],
                }
                for n in self.node_latency
            },
            "skip_edges": {
                edge_key(e): {
                    "placement": self.placement.get(e, ON),
                    "depth_words": self.edge_depth.get(e),
                    "bandwidth_bps": self.edge_bandwidth.get(e, 0.0),
                }
                for e in self.edge_depth
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["row", "name", "kind", "parallelism", "latency_s", "depth_cycles", "dsp",
                     "placement", "depth_words", "bandwidth_bps"])
        for n in self.node_latency:
            wr.writerow(["node", n, self.kinds.get(n, ""), self.parallelism[n],
                         f"{self.node_latency[n]:.9g}", f"{self.node_depth[n]:.9g}",
                         self.node_dsp[n], "", "", ""])
        for e in self.edge_depth:
            wr.writerow(["skip", edge_key(e), "", "", "", "", "", self.placement.get(e, ON),
                         self.edge_depth[e], f"{self.edge_bandwidth.get(e, 0.0):.9g}"])
        return buf.getvalue()


def evaluate(graph: NetworkGraph, dp: DesignPoint, platform: PlatformSpec, qc: QuantConfig,
             depths, overrides: Mapping[str, float] | None = None) -> PerfReport:
    """Full analytic report for one design point."""
    for n in graph.node_ids:
        if n not in dp.p:
            raise DesignError(f"design point has no parallelism for {n}")
        check_parallelism(graph, n, dp.p[n])
    q = _depth_map(depths)
    lat = total_latency(graph, dp, platform, overrides)
    edges = graph.skip_edges()
    bw = {e: buffer_bandwidth(graph.shapes[e].size, dp.t_buf.get(e, ON), lat, qc.w_a) for e in edges}
    return PerfReport(
        node_latency={n: node_latency(graph, n, dp.p[n], platform.f_clk) for n in graph.node_ids},
        node_depth={n: pipeline_depth(graph, n, dp.p[n], overrides) for n in graph.node_ids},
        node_dsp={n: node_dsp(graph, n, dp.p[n]) for n in graph.node_ids},
        total_latency=lat,
        dsp_used=total_dsp(graph, dp.p),
        memory=memory_breakdown(graph, dp, qc, q),
        offchip_bw_used=sum(bw.values()),
        edge_bandwidth=bw,
        edge_depth={e: int(q[e]) for e in edges if e in q},
        placement={e: dp.t_buf.get(e, ON) for e in edges},
        parallelism=dict(dp.p),
        kinds={n.id: n.kind for n in graph.nodes},
    )
