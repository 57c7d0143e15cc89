"""Pipeline construction and the synchronous cycle loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..dse import DepthReport
from ..graph_ir import NetworkGraph
from ..perf_models import OFF, DesignError, DesignPoint, PlatformSpec, check_parallelism
from ..quantizer import FixedPointPlan, QuantConfig
from .channel import Channel, SoftFifoChannel, SoftFifoConfig
from . import processes as P

Edge = tuple[str, str]

SUPPORTED = ("Input", "Output", "Convolution", "MaxPool", "Resize", "Split", "Concat", "Add",
             "HardSwish", "LeakyReLU")

# DMA figures used when a design has off-chip buffers but no platform is given
NOMINAL_PLATFORM = PlatformSpec(dsp_total=1, onchip_bits=1, f_clk=200e6, offchip_bw=135e9, name="nominal")


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    def __init__(self, message: str, diagnostics: list[str]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class SimResult:
    outputs: dict[str, np.ndarray]
    cycles_total: int
    cycles_steady: int
    depths: DepthReport
    deadlocked: bool = False
    diagnostics: list[str] = field(default_factory=list)
    node_depth: dict[str, int] = field(default_factory=dict)
    busy_cycles: dict[str, int] = field(default_factory=dict)
    window_high: dict[str, int] = field(default_factory=dict)
    traces: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    # (consumed, produced) per process and (pushed, popped, high) per channel
    node_words: dict[str, tuple[int, int]] = field(default_factory=dict)
    edge_words: dict[Edge, tuple[int, int, int]] = field(default_factory=dict)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["cycle", "channel", "occupancy"])
        for name in sorted(self.traces):
            for cycle, occ in self.traces[name]:
                wr.writerow([cycle, name, occ])
        return buf.getvalue()


def _skip_name(e: Edge) -> str:
    return f"{e[0]}->{e[1]}"


class Pipeline:
    """A graph bound to a design point and fixed-point plan.

    Processes and channels are rebuilt for every run, so one pipeline can be
    simulated repeatedly (or from several threads) without shared state.
    """

    def __init__(self, graph: NetworkGraph, dp: DesignPoint, plan: FixedPointPlan, *,
                 capacity: int | None = None, skip_capacities: Mapping[Edge, int | None] | None = None,
                 chunk_size: int = 256, platform: PlatformSpec | None = None):
        self.graph = graph
        self.dp = dp
        self.plan = plan
        self.capacity = capacity
        self.skip_capacities = dict(skip_capacities or {})
        self.chunk_size = chunk_size
        self.platform = platform or NOMINAL_PLATFORM

    def with_skip_capacities(self, caps: Mapping[Edge, int | None]) -> "Pipeline":
        return Pipeline(self.graph, self.dp, self.plan, capacity=self.capacity, skip_capacities=caps,
                        chunk_size=self.chunk_size, platform=self.platform)

    def edge_capacity(self, e: Edge) -> int | None:
        if e in self.skip_capacities:
            return self.skip_capacities[e]
        if self.graph.node(e[1]).kind in ("Concat", "Add"):
            return None  # skip buffers default to unbounded
        if self.capacity is not None:
            return self.capacity
        return 2 * max(self.dp.p[e[0]], self.dp.p[e[1]])

    # -- instantiation ----------------------------------------------------
    def _make_channel(self, e: Edge, trace: bool) -> Channel:
        g = self.graph
        if g.node(e[1]).kind in ("Concat", "Add") and self.dp.t_buf.get(e) == OFF:
            words = g.shapes[e].size
            cfg = SoftFifoConfig(depth=max(1, math.ceil(words / self.chunk_size)), chunk_size=self.chunk_size)
            rate = self.platform.offchip_words_per_cycle(self.plan.qc.w_a) / 2
            return SoftFifoChannel(_skip_name(e), cfg, words, rate, self.platform.dma_burst, trace=trace)
        return Channel(_skip_name(e), self.edge_capacity(e), trace)

    def _make_process(self, nid: str, x: np.ndarray | None) -> P.Process:
        g, plan = self.graph, self.plan
        node = g.node(nid)
        p = self.dp.p[nid]
        bits = plan.qc.w_a
        f_out = plan.frac[nid]
        f_in = tuple(plan.frac[s] for s in node.inputs)
        kind = node.kind
        if kind == "Input":
            data = x if x is not None else np.zeros(g.input_shape.as_tuple(), dtype=np.int64)
            return P.InputProc(node, p, data)
        if kind == "Output":
            return P.OutputProc(node, p, g.in_shape(nid))
        shape = g.in_shape(nid)
        if kind == "Convolution":
            w = plan.weights[nid].effective()
            return P.ConvProc(node, p, shape, g.out_shape(nid), w, plan.conv_requant(nid, f_in[0]), bits)
        if kind == "MaxPool":
            return P.MaxPoolProc(node, p, shape, g.out_shape(nid))
        if kind == "Resize":
            return P.ResizeProc(node, p, shape)
        if kind == "Split":
            return P.SplitProc(node, p, shape, len(g.consumers(nid)))
        if kind == "Concat":
            chans = [g.in_shape(nid, i).c for i in range(len(node.inputs))]
            return P.ConcatProc(node, p, chans, shape.h * shape.w, f_in, f_out, bits)
        if kind == "Add":
            return P.AddProc(node, p, shape.size, f_in, f_out, bits)
        if kind == "HardSwish":
            return P.MapProc(node, p, shape.size, P.hardswish_fn(f_in[0], f_out, bits))
        if kind == "LeakyReLU":
            return P.MapProc(node, p, shape.size, P.leaky_fn(node.slope, f_in[0], f_out, bits))
        raise DesignError(f"{nid}: unsupported kind {kind!r}")

    def instantiate(self, x: np.ndarray | None = None, trace: bool = False):
        g = self.graph
        procs = {nid: self._make_process(nid, x) for nid in g.topological_order()}
        chans: dict[Edge, Channel] = {}
        for nid in g.topological_order():
            for cons in g.consumers(nid):
                ch = self._make_channel((nid, cons), trace)
                chans[(nid, cons)] = ch
                procs[nid].outs.append(ch)
        for nid in g.node_ids:
            procs[nid].ins = [chans[(src, nid)] for src in g.node(nid).inputs]
        return procs, chans

    @property
    def processes(self) -> dict[str, P.Process]:
        return self.instantiate()[0]

    @property
    def channels(self) -> dict[Edge, Channel]:
        return self.instantiate()[1]


def build_pipeline(graph: NetworkGraph, dp: DesignPoint, quant: QuantConfig | FixedPointPlan | None = None,
                   **kwargs) -> Pipeline:
    """Bind a graph to a design point. ``quant`` is either a ready plan or a
    quantization config to calibrate one from (seed 0)."""
    for node in graph.nodes:
        if node.kind not in SUPPORTED:
            raise DesignError(f"{node.id}: unsupported kind {node.kind!r}")
        if node.id not in dp.p:
            raise DesignError(f"design point has no parallelism for {node.id}")
        check_parallelism(graph, node.id, dp.p[node.id])
    if isinstance(quant, FixedPointPlan):
        plan = quant
    else:
        from ..golden_ref import calibrate

        plan = calibrate(graph, quant or QuantConfig())
    return Pipeline(graph, dp, plan, **kwargs)


def _diagnose(procs, chans) -> list[str]:
    lines = []
    for e, ch in chans.items():
        cap = "inf" if ch.capacity is None else str(ch.capacity)
        state = "full" if ch.space() < 1 else "empty" if len(ch) == 0 else "partial"
        lines.append(f"channel {ch.name}: {len(ch)}/{cap} words ({state})")
    for pr in procs.values():
        if not pr.done():
            lines.append("blocked " + pr.status())
    return lines


def run_sim(pipe: Pipeline, x: np.ndarray, *, trace: bool = False, max_cycles: int | None = None) -> SimResult:
    g = pipe.graph
    x = np.asarray(x)
    if x.shape != g.input_shape.as_tuple():
        raise ValueError(f"input shape {x.shape} does not match {g.input_shape.as_tuple()}")
    procs, chans = pipe.instantiate(x.astype(np.int64), trace)
    order = [procs[n] for n in reversed(g.topological_order())]
    outputs = [pr for pr in procs.values() if isinstance(pr, P.OutputProc)]
    softs = [ch for ch in chans.values() if isinstance(ch, SoftFifoChannel)]
    traced = list(chans.values()) if trace else []
    if max_cycles is None:
        max_cycles = 100 * sum(pr.n_in + pr.n_out for pr in procs.values()) + 100_000
    cycle = 0
    deadlocked = False
    # run until every process has drained its input: strided windows may
    # finish their outputs before the trailing rows arrive
    while not all(pr.done() for pr in order):
        cycle += 1
        if cycle > max_cycles:
            raise SimulationError(f"simulation exceeded {max_cycles} cycles")
        moved = False
        for pr in order:
            if pr.step(cycle):
                moved = True
        for ch in softs:
            if ch.tick():
                moved = True
        for ch in traced:
            ch.record(cycle)
        if not moved:
            deadlocked = True
            break
    diags = _diagnose(procs, chans) if deadlocked else []
    outs = {} if deadlocked else {o.id: o.tensor() for o in outputs}
    last = max((o.last_out for o in outputs if o.last_out is not None), default=0)
    # bottleneck interval: the longest first-to-last emission span of any process
    steady = max((pr.last_out - pr.first_out + 1 for pr in procs.values() if pr.first_out is not None),
                 default=0)
    depth = {}
    for nid, pr in procs.items():
        if pr.first_in is not None and pr.first_out is not None:
            depth[nid] = pr.first_out - pr.first_in
    depth_report = DepthReport({e: chans[e].high for e in g.skip_edges()}, source="simulated")
    return SimResult(
        outputs=outs,
        cycles_total=last,
        cycles_steady=steady,
        depths=depth_report,
        deadlocked=deadlocked,
        diagnostics=diags,
        node_depth=depth,
        busy_cycles={nid: pr.engine_cycles for nid, pr in procs.items() if isinstance(pr, P.WindowProc)},
        window_high={nid: pr.window_high for nid, pr in procs.items() if isinstance(pr, P.WindowProc)},
        traces={ch.name: ch.trace for ch in traced},
        node_words={nid: (pr.consumed, pr.produced) for nid, pr in procs.items()},
        edge_words={e: (ch.pushed, ch.popped, ch.high) for e, ch in chans.items()},
    )


def measure_fifo_depths(pipe: Pipeline, x: np.ndarray) -> DepthReport:
    """Skip-buffer depths as the high-water marks of a run in which every
    skip channel is unbounded (all other channels keep their capacity, so
    back-pressure still paces the forks)."""
    probe = pipe.with_skip_capacities({e: None for e in pipe.graph.skip_edges()})
    res = run_sim(probe, x)
    if res.deadlocked:
        raise DeadlockError("deadlock during depth analysis", res.diagnostics)
    return res.depths
