"""Straight-line functional reference for every building block.

Deliberately naive: plain nested loops over Python scalars. Tensors are
``(H, W, C)`` numpy arrays. Real mode works on floats; fixed-point mode
works on integers and reproduces the simulator's arithmetic exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph_ir import NetworkGraph, NodeSpec, split_channels
from .quantizer import (
    FixedPointPlan,
    QuantConfig,
    from_fixed,
    hardswish_fixed,
    leaky_fixed,
    make_plan,
    rescale,
    round_shift,
    saturate,
    slope_fixed,
    to_fixed,
)


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class FixedCtx:
    """Integer-mode context for one kernel evaluation."""

    bits: int
    f_in: tuple[int, ...]
    f_out: int
    requant: tuple[int, int] | None = None


def hardswish(x: float) -> float:
    return x * min(max(x + 3.0, 0.0), 6.0) / 6.0


def leaky_relu(x: float, slope: float) -> float:
    return x if x >= 0 else slope * x


def silu_ref(x: float) -> float:
    if x >= 0:
        return x / (1.0 + math.exp(-x))
    e = math.exp(x)
    return x * e / (1.0 + e)


def hardswish_silu_gap(lo: float = -8.0, hi: float = 8.0, n: int = 160_001) -> float:
    """Largest |silu - hardswish| over a uniform grid on [lo, hi]."""
    return max(abs(silu_ref(x) - hardswish(x)) for x in np.linspace(lo, hi, n).tolist())


def _check_arity(node: NodeSpec, inputs: Sequence[np.ndarray]) -> None:
    if node.kind in ("Concat", "Add"):
        if len(inputs) < 2:
            raise KernelError(f"{node.id}: {node.kind} needs at least 2 inputs")
    elif len(inputs) != 1:
        raise KernelError(f"{node.id}: {node.kind} takes 1 input, got {len(inputs)}")
    for x in inputs:
        if np.ndim(x) != 3:
            raise KernelError(f"{node.id}: inputs must be (H, W, C)")


def _conv(node, x, weights, fx):
    h, w, c = x.shape
    f, wc, k, k2 = weights.shape
    if wc != c or k != node.kernel_size or k2 != k or f != node.filters:
        raise KernelError(f"{node.id}: weights {weights.shape} do not match input {x.shape}")
    s = node.strides
    top, left, bottom, right = node.pads
    ho = (h + top + bottom - k) // s + 1
    wo = (w + left + right - k) // s + 1
    xs = x.tolist()
    ws = weights.tolist()
    zero = 0 if fx is not None else 0.0
    out = [[[zero] * f for _ in range(wo)] for _ in range(ho)]
    for oy in range(ho):
        for ox in range(wo):
            for fi in range(f):
                acc = zero
                for ky in range(k):
                    iy = oy * s - top + ky
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(k):
                        ix = ox * s - left + kx
                        if ix < 0 or ix >= w:
                            continue
                        for ci in range(c):
                            acc += xs[iy][ix][ci] * ws[fi][ci][ky][kx]
                if fx is not None:
                    mult, shift = fx.requant
                    acc = saturate(round_shift(acc * mult, shift), fx.bits)
                out[oy][ox][fi] = acc
    return np.array(out, dtype=np.int64 if fx is not None else np.float64).reshape(ho, wo, f)


def _maxpool(node, x):
    h, w, c = x.shape
    k, s = node.kernel_size, node.strides
    top, left, bottom, right = node.pads
    ho = (h + top + bottom - k) // s + 1
    wo = (w + left + right - k) // s + 1
    xs = x.tolist()
    out = np.empty((ho, wo, c), dtype=x.dtype)
    for oy in range(ho):
        for ox in range(wo):
            for ci in range(c):
                best = None
                for ky in range(k):
                    iy = oy * s - top + ky
                    for kx in range(k):
                        ix = ox * s - left + kx
                        if 0 <= iy < h and 0 <= ix < w:
                            v = xs[iy][ix][ci]
                            if best is None or v > best:
                                best = v
                if best is None:
                    raise KernelError(f"{node.id}: window at ({oy}, {ox}) lies entirely in padding")
                out[oy, ox, ci] = best
    return out


def _resize(node, x):
    h, w, c = x.shape
    s = node.scale_factor
    out = np.empty((h * s, w * s, c), dtype=x.dtype)
    for y in range(h * s):
        for xx in range(w * s):
            for ci in range(c):
                out[y, xx, ci] = x[y // s, xx // s, ci]
    return out


def eval_kernel(node: NodeSpec, inputs: Sequence[np.ndarray], weights: np.ndarray | None = None,
                n_outputs: int = 1, fixed: FixedCtx | None = None):
    """Evaluate one building block.

    Returns an array, or a list of arrays for Split (one per output, in
    consumer order).
    """
    _check_arity(node, inputs)
    kind = node.kind
    x = np.asarray(inputs[0])
    if fixed is not None:
        x = x.astype(np.int64)
    if kind == "Convolution":
        if weights is None:
            raise KernelError(f"{node.id}: convolution needs weights")
        return _conv(node, x, np.asarray(weights), fixed)
    if kind == "MaxPool":
        return _maxpool(node, x)
    if kind == "Resize":
        return _resize(node, x)
    if kind in ("Input", "Output"):
        return x.copy()
    if kind == "Split":
        groups = split_channels(node, x.shape[2], n_outputs)
        outs, start = [], 0
        for g in groups:
            outs.append(x[:, :, start:start + g].copy())
            start += g
        return outs
    if kind == "Concat":
        if len({a.shape[:2] for a in inputs}) != 1:
            raise KernelError(f"{node.id}: Concat inputs disagree on H/W")
        parts = []
        for i, a in enumerate(inputs):
            a = np.asarray(a)
            if fixed is not None:
                a = _map_int(a, lambda v, i=i: saturate(rescale(v, fixed.f_in[i], fixed.f_out), fixed.bits))
            parts.append(a)
        return np.concatenate(parts, axis=2)
    if kind == "Add":
        if len({np.shape(a) for a in inputs}) != 1:
            raise KernelError(f"{node.id}: Add shape mismatch")
        if fixed is None:
            return sum(np.asarray(a, dtype=np.float64) for a in inputs)
        flat = [np.asarray(a).ravel().tolist() for a in inputs]
        vals = [saturate(sum(rescale(v, fixed.f_in[i], fixed.f_out) for i, v in enumerate(col)), fixed.bits)
                for col in zip(*flat)]
        return np.array(vals, dtype=np.int64).reshape(np.shape(inputs[0]))
    if kind == "HardSwish":
        if fixed is None:
            return _map_real(x, hardswish)
        return _map_int(x, lambda v: hardswish_fixed(v, fixed.f_in[0], fixed.f_out, fixed.bits))
    if kind == "LeakyReLU":
        if fixed is None:
            return _map_real(x, lambda v: leaky_relu(v, node.slope))
        sq = slope_fixed(node.slope)
        return _map_int(x, lambda v: leaky_fixed(v, sq, fixed.f_in[0], fixed.f_out, fixed.bits))
    raise KernelError(f"{node.id}: unsupported kind {kind!r}")


def _map_real(x, fn):
    return np.array([fn(v) for v in x.ravel().tolist()], dtype=np.float64).reshape(x.shape)


def _map_int(x, fn):
    return np.array([fn(v) for v in x.ravel().tolist()], dtype=np.int64).reshape(x.shape)


def _run(graph: NetworkGraph, x: np.ndarray, plan: FixedPointPlan | None) -> dict[str, np.ndarray]:
    """Evaluate every node; returns each node's output keyed by edge or node."""
    results: dict[tuple[str, str] | str, np.ndarray] = {}
    node_out: dict[str, np.ndarray] = {}
    for nid in graph.topological_order():
        node = graph.node(nid)
        if node.kind == "Input":
            ins = [np.asarray(x)]
        else:
            ins = [results[(src, nid)] for src in node.inputs]
        consumers = graph.consumers(nid)
        fx = None
        weights = None
        if node.kind == "Convolution":
            if plan is None:
                weights = graph.weight(nid)
            else:
                weights = plan.weights[nid].effective()
        if plan is not None:
            f_in = tuple(plan.frac[s] for s in node.inputs) or (plan.frac[nid],)
            requant = plan.conv_requant(nid, f_in[0]) if node.kind == "Convolution" else None
            fx = FixedCtx(plan.qc.w_a, f_in, plan.frac[nid], requant)
        out = eval_kernel(node, ins, weights, n_outputs=max(len(consumers), 1), fixed=fx)
        if node.kind == "Split":
            for cons, part in zip(consumers, out):
                results[(nid, cons)] = part
            node_out[nid] = np.concatenate(out, axis=2)
        else:
            for cons in consumers:
                results[(nid, cons)] = out
            node_out[nid] = out
    return node_out


def run_reference(graph: NetworkGraph, x: np.ndarray, qc: QuantConfig | None = None, *,
                  plan: FixedPointPlan | None = None) -> dict[str, np.ndarray]:
    """Whole-graph oracle, returning one tensor per Output node.

    * no ``qc``/``plan``: real arithmetic on a real input.
    * ``plan``: integer arithmetic; ``x`` is already fixed point.
    * ``qc`` only: calibrate a plan on ``x``, run in integer arithmetic and
      return dequantized real outputs.
    """
    outputs = [n.id for n in graph.nodes if n.kind == "Output"]
    if plan is not None:
        res = _run(graph, x, plan)
        return {o: res[o] for o in outputs}
    if qc is None:
        res = _run(graph, np.asarray(x, dtype=np.float64), None)
        return {o: res[o] for o in outputs}
    plan = calibrate(graph, qc, x)
    input_id = next(n.id for n in graph.nodes if n.kind == "Input")
    xi = to_fixed(x, plan.frac[input_id], qc.w_a)
    res = _run(graph, xi, plan)
    return {o: from_fixed(res[o], plan.frac[o]) for o in outputs}


def activation_ranges(graph: NetworkGraph, x: np.ndarray) -> dict[str, float]:
    res = _run(graph, np.asarray(x, dtype=np.float64), None)
    return {nid: float(np.max(np.abs(v))) if v.size else 0.0 for nid, v in res.items()}


def calibration_input(graph: NetworkGraph, seed: int = 0) -> np.ndarray:
    shape = graph.input_shape.as_tuple()
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=shape)


def calibrate(graph: NetworkGraph, qc: QuantConfig, x: np.ndarray | None = None,
              seed: int = 0, weights: Mapping | None = None) -> FixedPointPlan:
    """Fixed-point plan from the dynamic range of a real-valued run."""
    if x is None:
        x = calibration_input(graph, seed)
    return make_plan(graph, qc, activation_ranges(graph, x), weights)
