"""Design space exploration: greedy DSP allocation, largest-first skip
buffer eviction, and brute-force oracles for both."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

from .graph_ir import WINDOWED, NetworkGraph
from .perf_models import (
    OFF,
    ON,
    DesignError,
    PlatformSpec,
    buffer_bandwidth,
    fixed_onchip_bits,
    node_cycles,
    node_dsp,
    pipeline_depth,
    total_dsp,
    total_latency_cycles,
    valid_parallelism,
)
from .quantizer import QuantConfig

log = logging.getLogger(__name__)

Edge = tuple[str, str]


class InfeasibleError(DesignError):
    pass


@dataclass(frozen=True)
class DseConfig:
    lam: float = 0.0
    max_iterations: int = 1_000_000
    search_bound: int = 1_000_000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass
class DepthReport:
    """Required skip-buffer depth q(n, m) in words, one entry per skip edge."""

    q: dict[Edge, int]
    source: str = "simulated"

    def __getitem__(self, edge: Edge) -> int:
        return self.q[edge]

    def __contains__(self, edge: Edge) -> bool:
        return edge in self.q

    def __len__(self) -> int:
        return len(self.q)

    def items(self):
        return self.q.items()

    def largest_first(self) -> list[Edge]:
        pos = {e: i for i, e in enumerate(self.q)}
        return sorted(self.q, key=lambda e: (-self.q[e], pos[e]))


@dataclass
class AllocationTrace:
    bottleneck: list[float] = field(default_factory=list)
    latency: list[float] = field(default_factory=list)
    chosen: list[str] = field(default_factory=list)


# --------------------------------------------------------------------------
# greedy DSP allocation
# --------------------------------------------------------------------------

def _dsp_nodes(graph: NetworkGraph) -> list[str]:
    return [n for n in graph.node_ids if node_dsp(graph, n, 1) > 0]


def _check_budget(graph: NetworkGraph, platform: PlatformSpec) -> dict[str, int]:
    p = {n: 1 for n in graph.node_ids}
    used = total_dsp(graph, p)
    if used > platform.dsp_total:
        raise InfeasibleError(
            f"infeasible: minimal design needs {used} DSPs, budget is {platform.dsp_total} "
            f"(deficit {used - platform.dsp_total})")
    return p


def allocate_dsp(graph: NetworkGraph, platform: PlatformSpec, config: DseConfig | None = None,
                 trace: AllocationTrace | None = None) -> dict[str, int]:
    """Greedy allocation: repeatedly raise the parallelism of the node whose
    next valid step buys the largest total-latency reduction within budget.

    Only DSP-consuming nodes are candidates; ties go to the earliest node.
    """
    config = config or DseConfig()
    p = _check_budget(graph, platform)
    ids = graph.node_ids
    used = total_dsp(graph, p)
    lat = {n: node_cycles(graph, n, 1) for n in ids}
    dep = {n: pipeline_depth(graph, n, 1) for n in ids}
    steps = {n: valid_parallelism(graph, n) for n in _dsp_nodes(graph)}
    cursor = {n: 0 for n in steps}

    def record():
        if trace is not None:
            trace.bottleneck.append(max(lat.values()))
            trace.latency.append(max(lat.values()) + sum(dep.values()))

    record()
    for _ in range(config.max_iterations):
        if used >= platform.dsp_total:
            break
        # top-2 latencies let each candidate's new bottleneck be found in O(1)
        ranked = sorted(ids, key=lambda n: -lat[n])[:2]
        first = ranked[0]
        second_val = lat[ranked[1]] if len(ranked) > 1 else 0.0
        base = lat[first] + sum(dep.values())
        dep_sum = sum(dep.values())
        best, best_delta, best_state = None, -math.inf, None
        for m in steps:
            i = cursor[m] + 1
            if i >= len(steps[m]):
                continue
            nxt = steps[m][i]
            extra = node_dsp(graph, m, nxt) - node_dsp(graph, m, p[m])
            if extra < 1 or used + extra > platform.dsp_total:
                continue
            l_new = node_cycles(graph, m, nxt)
            d_new = pipeline_depth(graph, m, nxt)
            others = second_val if m == first else lat[first]
            cand = max(others, l_new) + dep_sum - dep[m] + d_new
            delta = base - cand
            if delta > best_delta:
                best, best_delta, best_state = m, delta, (nxt, extra, l_new, d_new)
        if best is None:
            break
        nxt, extra, l_new, d_new = best_state
        p[best] = nxt
        cursor[best] += 1
        used += extra
        lat[best] = l_new
        dep[best] = d_new
        if trace is not None:
            trace.chosen.append(best)
        record()
    return p


def exhaustive_dsp_search(graph: NetworkGraph, platform: PlatformSpec,
                          bound: int = 1_000_000) -> dict[str, int]:
    """Latency-optimal parallelism over every divisor-valid vector within budget."""
    p = _check_budget(graph, platform)
    cand = _dsp_nodes(graph)
    choices = [valid_parallelism(graph, n) for n in cand]
    space = math.prod(len(c) for c in choices)
    if space > bound:
        raise DesignError(f"search space of {space} vectors exceeds bound {bound}")
    budget = platform.dsp_total - total_dsp(graph, p) + sum(node_dsp(graph, n, 1) for n in cand)
    fixed_lat = max((node_cycles(graph, n, 1) for n in graph.node_ids if n not in cand), default=0.0)
    fixed_dep = sum(pipeline_depth(graph, n, 1) for n in graph.node_ids if n not in cand)
    tables = [[(node_dsp(graph, n, v), node_cycles(graph, n, v), pipeline_depth(graph, n, v), v)
               for v in ch] for n, ch in zip(cand, choices)]

    best_key, best_vec = None, None

    def dfs(i: int, dsp: int, lmax: float, dsum: float, vec: list[int]):
        nonlocal best_key, best_vec
        if i == len(tables):
            key = (max(lmax, fixed_lat) + dsum + fixed_dep, dsp)
            if best_key is None or key < best_key:
                best_key, best_vec = key, list(vec)
            return
        for r, l, d, v in tables[i]:
            if dsp + r > budget:
                break  # DSP cost grows with v
            vec.append(v)
            dfs(i + 1, dsp + r, max(lmax, l), dsum + d, vec)
            vec.pop()

    dfs(0, 0, 0.0, 0.0, [])
    for n, v in zip(cand, best_vec or []):
        p[n] = v
    return p


# --------------------------------------------------------------------------
# skip buffer placement
# --------------------------------------------------------------------------

def place_buffers(sizes_bits: Mapping[Edge, int], s_avail: float) -> dict[Edge, str]:
    """Start all on-chip; evict largest-first while the on-chip total exceeds
    ``s_avail``; stop at the first fit."""
    t = {e: ON for e in sizes_bits}
    if s_avail < 0:
        raise InfeasibleError(f"infeasible: no on-chip memory left for skip buffers ({s_avail:.0f} bits)")
    pos = {e: i for i, e in enumerate(sizes_bits)}
    order = sorted(sizes_bits, key=lambda e: (-sizes_bits[e], pos[e]))
    on_bits = sum(sizes_bits.values())
    for e in order:
        if on_bits > s_avail:
            t[e] = OFF
            on_bits -= sizes_bits[e]
        else:
            break
    return t


def skip_avail(graph: NetworkGraph, platform: PlatformSpec, qc: QuantConfig) -> int:
    return platform.onchip_bits - fixed_onchip_bits(graph, qc)


def allocate_buffers(graph: NetworkGraph, depths: DepthReport, platform: PlatformSpec,
                     qc: QuantConfig) -> dict[Edge, str]:
    missing = [e for e in graph.skip_edges() if e not in depths]
    if missing:
        raise DesignError(f"no depth for skip edges {missing}")
    sizes = {e: depths[e] * qc.w_a for e in graph.skip_edges()}
    return place_buffers(sizes, skip_avail(graph, platform, qc))


def exhaustive_buffer_search(sizes_bits: Mapping[Edge, int], bandwidth: Mapping[Edge, float],
                             s_avail: float, lam: float = 0.0, max_edges: int = 12) -> dict[Edge, str]:
    """Minimise off-chip bandwidth + lam * (#off-chip buffers) over all
    placements that fit; ties prefer fewer off-chip buffers."""
    edges = list(sizes_bits)
    if len(edges) > max_edges:
        raise DesignError(f"exhaustive placement limited to {max_edges} edges, got {len(edges)}")
    best_key, best = None, None
    for mask in itertools.product((ON, OFF), repeat=len(edges)):
        on_bits = sum(sizes_bits[e] for e, t in zip(edges, mask) if t == ON)
        if on_bits > s_avail:
            continue
        n_off = mask.count(OFF)
        cost = sum(bandwidth[e] for e, t in zip(edges, mask) if t == OFF) + lam * n_off
        key = (cost, n_off)
        if best_key is None or key < best_key:
            best_key, best = key, mask
    if best is None:
        raise InfeasibleError("infeasible: no placement fits on-chip memory")
    return dict(zip(edges, best))


def evict_largest(depths: DepthReport, k: int) -> dict[Edge, str]:
    """Placement with the ``k`` deepest buffers off-chip (ablation sweep)."""
    off = set(depths.largest_first()[:k])
    return {e: OFF if e in off else ON for e in depths.q}


def skip_bandwidths(graph: NetworkGraph, latency_s: float, w_a: int) -> dict[Edge, float]:
    return {e: buffer_bandwidth(graph.shapes[e].size, OFF, latency_s, w_a) for e in graph.skip_edges()}


# --------------------------------------------------------------------------
# analytic depth fallback
# --------------------------------------------------------------------------

def _fill_fraction(graph: NetworkGraph, node_id: str) -> float:
    """Share of the input frame a node must absorb before its first output."""
    node = graph.node(node_id)
    if node.kind not in WINDOWED:
        return 0.0
    s = graph.in_shape(node_id)
    top, left, _, _ = node.pads
    k = node.kernel_size
    words = max(k - 1 - top, 0) * s.w + max(k - left, 1)
    return words / (s.h * s.w)


def analytic_depths(graph: NetworkGraph) -> DepthReport:
    """Skip depths from branch fill imbalance, assuming every stream advances
    through its frame at the same pace.

    A join consumes position x of all inputs together; an input whose producer
    runs ahead by a frame fraction delta must hold delta * S words, plus one
    pixel of channel slack.
    """
    lag: dict[str, float] = {}
    for nid in graph.topological_order():
        node = graph.node(nid)
        upstream = max((lag[s] for s in node.inputs), default=0.0)
        lag[nid] = upstream + _fill_fraction(graph, nid)
    q = {}
    for src, dst in graph.skip_edges():
        lead = max(lag[s] for s in graph.node(dst).inputs) - lag[src]
        shape = graph.shapes[(src, dst)]
        q[(src, dst)] = min(math.ceil(lead * shape.size) + shape.c, shape.size)
    return DepthReport(q, source="analytic")


def design_point_summary(p: Mapping[str, int], graph: NetworkGraph) -> dict[str, float]:
    return {
        "dsp_used": total_dsp(graph, p),
        "latency_cycles": total_latency_cycles(graph, p),
        "bottleneck_cycles": max(node_cycles(graph, n, p[n]) for n in graph.node_ids),
    }

