"""Random graph and design generators shared by the test suite and the
experiment scripts. Everything is driven by an explicit ``random.Random``."""

from __future__ import annotations

import random

from .graph_ir import NetworkGraph, TensorShape, parse_network, window_out
from .perf_models import DesignPoint, valid_parallelism


class _Net:
    def __init__(self, shape: tuple[int, int, int]):
        self.nodes: list[dict] = [{"id": "in", "kind": "Input", "shape": list(shape)}]
        self.shape = {"in": TensorShape(*shape)}
        self.uses = {"in": 0}

    def add(self, kind, inputs, shape: TensorShape, **kw) -> str:
        nid = f"n{len(self.nodes)}"
        self.nodes.append({"id": nid, "kind": kind, "inputs": list(inputs), **kw})
        for s in inputs:
            self.uses[s] += 1
        self.shape[nid] = shape
        self.uses[nid] = 0
        return nid

    def sinks(self) -> list[str]:
        return [n["id"] for n in self.nodes if self.uses[n["id"]] == 0 and n["kind"] != "Output"]


def _window(rng, s: TensorShape, kind: str, max_dim: int):
    k = rng.choice([1, 2, 3]) if kind == "Convolution" else rng.choice([2, 3])
    stride = rng.choice([1, 1, 2])
    pads = [rng.randint(0, k - 1) for _ in range(4)] if rng.random() < 0.7 else [0, 0, 0, 0]
    ho = window_out(s.h, k, stride, pads[0], pads[2])
    wo = window_out(s.w, k, stride, pads[1], pads[3])
    if ho < 1 or wo < 1:
        return None
    return k, stride, pads, ho, wo


def _unary(rng, net: _Net, src: str, max_dim: int, max_c: int) -> str | None:
    s = net.shape[src]
    kind = rng.choice(["Convolution", "Convolution", "MaxPool", "HardSwish", "LeakyReLU", "Resize"])
    if kind in ("HardSwish", "Output"):
        return net.add(kind, [src], s)
    if kind == "LeakyReLU":
        return net.add(kind, [src], s, slope=rng.choice([0.1, 0.25, 0.01]))
    if kind == "Resize":
        if 2 * max(s.h, s.w) > max_dim:
            return net.add("HardSwish", [src], s)
        return net.add(kind, [src], TensorShape(2 * s.h, 2 * s.w, s.c), scale_factor=2)
    win = _window(rng, s, kind, max_dim)
    if win is None:
        return net.add("HardSwish", [src], s)
    k, stride, pads, ho, wo = win
    if kind == "MaxPool":
        return net.add(kind, [src], TensorShape(ho, wo, s.c), kernel_size=k, stride=stride, padding=pads)
    f = rng.randint(1, max_c)
    return net.add(kind, [src], TensorShape(ho, wo, f), kernel_size=k, filters=f, stride=stride,
                   padding=pads)


def random_graph(rng: random.Random, max_nodes: int = 8, max_dim: int = 16, max_c: int = 8,
                 max_hw: int = 12) -> NetworkGraph:
    """Random DAG over every supported kind, at most ``max_nodes`` nodes
    including Input and Output nodes."""
    h, w = rng.randint(2, max_hw), rng.randint(2, max_hw)
    net = _Net((h, w, rng.randint(1, max_c)))
    while True:
        budget = max_nodes - len(net.nodes) - len(net.sinks())
        if budget <= 0:
            break
        ids = [n["id"] for n in net.nodes if n["kind"] not in ("Output", "Split")]
        recent = net.sinks() or ids[-3:]
        r = rng.random()
        if r < 0.3 and len(ids) >= 2:
            # join two tensors with matching spatial dims
            a = rng.choice(recent)
            sa = net.shape[a]
            partners = [b for b in ids if b != a and net.shape[b].h == sa.h and net.shape[b].w == sa.w]
            if partners:
                b = rng.choice(partners)
                sb = net.shape[b]
                if sa == sb and rng.random() < 0.5:
                    net.add("Add", [a, b], sa)
                else:
                    net.add("Concat", [a, b], TensorShape(sa.h, sa.w, sa.c + sb.c))
                continue
        if r < 0.45 and budget >= 3:
            src = rng.choice(recent)
            s = net.shape[src]
            if s.c >= 2:
                c1 = rng.randint(1, s.c - 1)
                sp = net.add("Split", [src], s, channels=[c1, s.c - c1])
                net.shape[sp] = s
                for c in (c1, s.c - c1):
                    # consumers of the split see their own channel group
                    sub = TensorShape(s.h, s.w, c)
                    net.shape[sp] = sub
                    _unary(rng, net, sp, max_dim, max_c)
                net.shape[sp] = s
                continue
        if r < 0.55 and len(ids) >= 2:
            # fork: reuse an older tensor so it feeds two consumers
            src = rng.choice(ids[:-1])
        else:
            src = rng.choice(recent)
        _unary(rng, net, src, max_dim, max_c)
    for sink in net.sinks():
        net.add("Output", [sink], net.shape[sink])
    return parse_network({"nodes": net.nodes})


def random_chain(rng: random.Random, n: int, max_hw: int = 16, min_hw: int = 8, max_c: int = 8,
                 kinds=("Convolution", "Convolution", "MaxPool", "HardSwish", "LeakyReLU")) -> NetworkGraph:
    """Input -> n shape-preserving nodes -> Output (stride 1, same padding)."""
    h, w = rng.randint(min_hw, max_hw), rng.randint(min_hw, max_hw)
    nodes = [{"id": "in", "kind": "Input", "shape": [h, w, rng.randint(1, max_c)]}]
    prev = "in"
    for i in range(n):
        kind = rng.choice(kinds)
        node = {"id": f"n{i}", "kind": kind, "inputs": [prev]}
        if kind == "Convolution":
            k = rng.choice([1, 3])
            node.update(kernel_size=k, filters=rng.randint(1, max_c), padding=k // 2)
        elif kind == "MaxPool":
            node.update(kernel_size=3, stride=1, padding=1)
        elif kind == "LeakyReLU":
            node.update(slope=0.1)
        nodes.append(node)
        prev = node["id"]
    nodes.append({"id": "out", "kind": "Output", "inputs": [prev]})
    return parse_network({"nodes": nodes})


def random_design(rng: random.Random, graph: NetworkGraph, fast_io: bool = False) -> DesignPoint:
    """Random divisor-valid parallelism; ``fast_io`` gives Input and Output
    their maximum so they never limit throughput."""
    p = {}
    for nid in graph.node_ids:
        opts = valid_parallelism(graph, nid)
        if fast_io and graph.node(nid).kind in ("Input", "Output"):
            p[nid] = opts[-1]
        else:
            p[nid] = rng.choice(opts)
    return DesignPoint(p)


def random_dsp_instance(rng: random.Random, max_dsp_nodes: int = 4) -> NetworkGraph:
    """Small chain with at most ``max_dsp_nodes`` DSP-consuming nodes,
    interleaved with zero-DSP routing nodes."""
    n_dsp = rng.randint(1, max_dsp_nodes)
    h = rng.randint(4, 16)
    nodes = [{"id": "in", "kind": "Input", "shape": [h, h, rng.randint(1, 8)]}]
    prev = "in"
    for i in range(n_dsp):
        kind = rng.choice(["Convolution", "Convolution", "HardSwish", "LeakyReLU"])
        node = {"id": f"d{i}", "kind": kind, "inputs": [prev]}
        if kind == "Convolution":
            k = rng.choice([1, 3])
            node.update(kernel_size=k, filters=rng.randint(1, 16), padding=k // 2)
        elif kind == "LeakyReLU":
            node.update(slope=0.1)
        nodes.append(node)
        prev = node["id"]
        if rng.random() < 0.3:
            nodes.append({"id": f"m{i}", "kind": "MaxPool", "inputs": [prev], "kernel_size": 3, "stride": 1,
                          "padding": 1})
            prev = f"m{i}"
    nodes.append({"id": "out", "kind": "Output", "inputs": [prev]})
    return parse_network({"nodes": nodes})
