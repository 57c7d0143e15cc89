"""Network intermediate representation.

A network is a DAG of operation nodes. Edges are ``(producer, consumer)``
pairs derived from each node's ``inputs`` list and, once shapes have been
inferred, carry an NHWC :class:`TensorShape`.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import numpy as np

KINDS = (
    "Input",
    "Output",
    "Convolution",
    "MaxPool",
    "Resize",
    "Split",
    "Concat",
    "Add",
    "HardSwish",
    "LeakyReLU",
)
WINDOWED = ("Convolution", "MaxPool")
JOINS = ("Concat", "Add")

# kind -> (required fields, optional fields); anything else is rejected
_KIND_FIELDS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "Input": ((), ("shape",)),
    "Output": ((), ()),
    "Convolution": (("kernel_size", "filters"), ("stride", "padding", "weights_ref")),
    "MaxPool": (("kernel_size",), ("stride", "padding")),
    "Resize": (("scale_factor",), ()),
    "Split": ((), ("channels",)),
    "Concat": ((), ()),
    "Add": ((), ()),
    "HardSwish": ((), ()),
    "LeakyReLU": (("slope",), ()),
}
_OPTIONAL_ATTRS = ("kernel_size", "stride", "padding", "filters", "scale_factor",
                   "slope", "weights_ref", "channels", "shape")


class NetworkFormatError(ValueError):
    """Raised for malformed network descriptions."""


class ShapeError(ValueError):
    """Raised when shape inference meets inconsistent or degenerate shapes."""


@dataclass(frozen=True, order=True)
class TensorShape:
    h: int
    w: int
    c: int

    def __post_init__(self):
        for name in ("h", "w", "c"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ShapeError(f"tensor dimension {name}={value} must be a positive integer")

    @property
    def size(self) -> int:
        return self.h * self.w * self.c

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.c)


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    kernel_size: int | None = None
    stride: int | None = None
    # (top, left, bottom, right), ONNX pads ordering
    padding: tuple[int, int, int, int] | None = None
    filters: int | None = None
    scale_factor: int | None = None
    slope: float | None = None
    weights_ref: str | None = None
    channels: tuple[int, ...] | None = None
    shape: TensorShape | None = None

    @property
    def pads(self) -> tuple[int, int, int, int]:
        return self.padding if self.padding is not None else (0, 0, 0, 0)

    @property
    def strides(self) -> int:
        return self.stride if self.stride is not None else 1


@dataclass(frozen=True)
class Violation:
    where: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.rule}: {self.message}"


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[NodeSpec, ...]
    shapes: Mapping[tuple[str, str], TensorShape] = field(
        default_factory=lambda: MappingProxyType({}))
    input_shape: TensorShape | None = None
    weights_file: str | None = None
    weights: Mapping[str, np.ndarray] = field(
        default_factory=lambda: MappingProxyType({}), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shapes", MappingProxyType(dict(self.shapes)))
        object.__setattr__(self, "weights", MappingProxyType(dict(self.weights)))
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})
        cons: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for src in n.inputs:
                cons.setdefault(src, []).append(n.id)
        object.__setattr__(self, "_consumers", cons)

    # --- structure -------------------------------------------------------
    def node(self, node_id: str) -> NodeSpec:
        return self._index[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(src, n.id) for n in self.nodes for src in n.inputs]

    def consumers(self, node_id: str) -> list[str]:
        return list(self._consumers.get(node_id, ()))

    def out_edges(self, node_id: str) -> list[tuple[str, str]]:
        return [(node_id, c) for c in self.consumers(node_id)]

    def in_edges(self, node_id: str) -> list[tuple[str, str]]:
        return [(src, node_id) for src in self.node(node_id).inputs]

    def topological_order(self) -> list[str]:
        """Kahn's algorithm; ties resolved by declaration order."""
        indeg = {n.id: len(n.inputs) for n in self.nodes}
        order: list[str] = []
        ready = [n.id for n in self.nodes if indeg[n.id] == 0]
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            for cons in self.consumers(nid):
                indeg[cons] -= 1
                if indeg[cons] == 0:
                    ready.append(cons)
            ready.sort(key=self.node_ids.index)
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.node_ids) - set(order), key=self.node_ids.index)
            raise NetworkFormatError(f"cycle detected among nodes {stuck}")
        return order

    def skip_edges(self) -> list[tuple[str, str]]:
        """Edges that feed a join (Concat/Add); these hold branch-imbalance buffers."""
        return [e for e in self.edges if self.node(e[1]).kind in JOINS]

    # --- shapes ----------------------------------------------------------
    def in_shape(self, node_id: str, index: int = 0) -> TensorShape:
        node = self.node(node_id)
        if node.kind == "Input":
            if self.input_shape is None:
                raise ShapeError("shapes have not been inferred")
            return self.input_shape
        return self.shapes[(node.inputs[index], node_id)]

    def out_shape(self, node_id: str) -> TensorShape:
        """Output shape of a non-Split node (Split outputs differ per edge)."""
        node = self.node(node_id)
        if node.kind == "Output":
            return self.in_shape(node_id)
        if node.kind == "Split":
            raise ShapeError(f"{node_id}: Split has one shape per output edge")
        outs = self.out_edges(node_id)
        if not outs:
            raise ShapeError(f"{node_id} has no consumers")
        return self.shapes[outs[0]]

    # --- weights ---------------------------------------------------------
    def weight(self, node_id: str) -> np.ndarray:
        """Real-valued (F, C, K, K) weights, synthesized when not loaded."""
        node = self.node(node_id)
        if node.kind != "Convolution":
            raise KeyError(f"{node_id} carries no weights")
        ref = node.weights_ref or node.id
        if ref in self.weights:
            return self.weights[ref]
        c = self.in_shape(node_id).c
        return synthesize_weights(ref, (node.filters, c, node.kernel_size, node.kernel_size))

    def with_weights(self, weights: Mapping[str, np.ndarray]) -> "NetworkGraph":
        merged = dict(self.weights)
        merged.update(weights)
        return replace(self, weights=merged)


def synthesize_weights(ref: str, dims: tuple[int, int, int, int]) -> np.ndarray:
    """Deterministic stand-in weights, variance-preserving uniform init."""
    f, c, k, _ = dims
    rng = np.random.default_rng(zlib.crc32(ref.encode()))
    bound = np.sqrt(3.0 / (c * k * k))
    arr = rng.uniform(-bound, bound, size=dims)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# parsing / serialization
# --------------------------------------------------------------------------

def _as_int(value: Any, node_id: str, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise NetworkFormatError(f"node {node_id!r}: field {name!r} must be an integer")
    return value


def _parse_padding(value: Any, node_id: str) -> tuple[int, int, int, int]:
    if isinstance(value, int) and not isinstance(value, bool):
        pads = (value,) * 4
    elif isinstance(value, list) and len(value) in (2, 4):
        pads = tuple(value) if len(value) == 4 else (value[0], value[1], value[0], value[1])
    else:
        raise NetworkFormatError(f"node {node_id!r}: padding must be an int or a list of 2 or 4 ints")
    for p in pads:
        if _as_int(p, node_id, "padding") < 0:
            raise NetworkFormatError(f"node {node_id!r}: padding must be non-negative")
    return pads  # type: ignore[return-value]


def _parse_node(obj: Any, seen: set[str]) -> NodeSpec:
    if not isinstance(obj, dict):
        raise NetworkFormatError("each node must be a JSON object")
    node_id = obj.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise NetworkFormatError("node is missing a string 'id'")
    if node_id in seen:
        raise NetworkFormatError(f"duplicate node id {node_id!r}")
    kind = obj.get("kind")
    if kind not in _KIND_FIELDS:
        raise NetworkFormatError(f"node {node_id!r}: unknown kind {kind!r}")
    required, optional = _KIND_FIELDS[kind]
    for name in required:
        if name not in obj:
            raise NetworkFormatError(f"node {node_id!r}: missing required field {name!r} for {kind}")
    extra = set(obj) - {"id", "kind", "inputs"} - set(required) - set(optional)
    if extra:
        raise NetworkFormatError(f"node {node_id!r}: fields {sorted(extra)} not allowed for {kind}")
    inputs = obj.get("inputs", [])
    if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
        raise NetworkFormatError(f"node {node_id!r}: 'inputs' must be a list of node ids")

    kw: dict[str, Any] = {}
    for name in ("kernel_size", "stride", "filters", "scale_factor"):
        if name in obj:
            kw[name] = _as_int(obj[name], node_id, name)
            if kw[name] < 1:
                raise NetworkFormatError(f"node {node_id!r}: {name} must be >= 1")
    if "padding" in obj:
        kw["padding"] = _parse_padding(obj["padding"], node_id)
    if "slope" in obj:
        if not isinstance(obj["slope"], (int, float)) or isinstance(obj["slope"], bool):
            raise NetworkFormatError(f"node {node_id!r}: slope must be a number")
        kw["slope"] = float(obj["slope"])
    if "weights_ref" in obj:
        if not isinstance(obj["weights_ref"], str):
            raise NetworkFormatError(f"node {node_id!r}: weights_ref must be a string")
        kw["weights_ref"] = obj["weights_ref"]
    if "channels" in obj:
        ch = obj["channels"]
        if not isinstance(ch, list) or not ch:
            raise NetworkFormatError(f"node {node_id!r}: channels must be a non-empty list")
        kw["channels"] = tuple(_as_int(c, node_id, "channels") for c in ch)
    if "shape" in obj:
        sh = obj["shape"]
        if not isinstance(sh, list) or len(sh) != 3:
            raise NetworkFormatError(f"node {node_id!r}: shape must be [h, w, c]")
        try:
            kw["shape"] = TensorShape(*(_as_int(s, node_id, "shape") for s in sh))
        except ShapeError as exc:
            raise NetworkFormatError(f"node {node_id!r}: {exc}") from None
    return NodeSpec(id=node_id, kind=kind, inputs=tuple(inputs), **kw)


def parse_network(text: str | dict, base_dir: str | Path | None = None) -> NetworkGraph:
    """Parse a JSON network description.

    Weights named by ``weights_file`` are loaded relative to ``base_dir``
    when the file exists; otherwise they stay symbolic and are synthesized
    on demand. If the Input node declares ``shape``, shapes are inferred.
    """
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
        raise NetworkFormatError("document must be an object with a 'nodes' array")
    extra = set(doc) - {"nodes", "weights_file"}
    if extra:
        raise NetworkFormatError(f"unknown top-level keys {sorted(extra)}")

    seen: set[str] = set()
    nodes = []
    for obj in doc["nodes"]:
        node = _parse_node(obj, seen)
        seen.add(node.id)
        nodes.append(node)
    for node in nodes:
        for src in node.inputs:
            if src not in seen:
                raise NetworkFormatError(f"node {node.id!r}: unknown input {src!r}")

    weights_file = doc.get("weights_file")
    weights: dict[str, np.ndarray] = {}
    if weights_file is not None:
        from .tensorfile import read_weight_file

        path = Path(weights_file)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if path.exists():
            weights = read_weight_file(path)

    graph = NetworkGraph(nodes=tuple(nodes), weights_file=weights_file, weights=weights)
    graph.topological_order()  # raises on cycles
    inputs = [n for n in nodes if n.kind == "Input"]
    if len(inputs) == 1 and inputs[0].shape is not None:
        graph = infer_shapes(graph, inputs[0].shape)
    return graph


def load_network(path: str | Path) -> NetworkGraph:
    path = Path(path)
    return parse_network(path.read_text(), base_dir=path.parent)


def serialize_network(graph: NetworkGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        obj: dict[str, Any] = {"id": n.id, "kind": n.kind}
        if n.inputs:
            obj["inputs"] = list(n.inputs)
        for name in _OPTIONAL_ATTRS:
            value = getattr(n, name)
            if value is None:
                continue
            if isinstance(value, TensorShape):
                value = list(value.as_tuple())
            elif isinstance(value, tuple):
                value = list(value)
            obj[name] = value
        if n.kind == "Input" and n.shape is None and graph.input_shape is not None:
            obj["shape"] = list(graph.input_shape.as_tuple())
        nodes.append(obj)
    doc: dict[str, Any] = {"nodes": nodes}
    if graph.weights_file is not None:
        doc["weights_file"] = graph.weights_file
    return doc


# --------------------------------------------------------------------------
# shape inference
# --------------------------------------------------------------------------

def window_out(size: int, k: int, stride: int, pad_lo: int, pad_hi: int) -> int:
    return (size + pad_lo + pad_hi - k) // stride + 1


def split_channels(node: NodeSpec, c_in: int, n_out: int) -> tuple[int, ...]:
    """Contiguous channel ranges, one per Split output in consumer order."""
    if node.channels is not None:
        if len(node.channels) != n_out:
            raise ShapeError(f"{node.id}: {len(node.channels)} channel groups for {n_out} outputs")
        if sum(node.channels) != c_in:
            raise ShapeError(f"{node.id}: channel groups sum to {sum(node.channels)}, input has {c_in}")
        return node.channels
    if n_out == 0 or c_in % n_out:
        raise ShapeError(f"{node.id}: cannot split {c_in} channels evenly into {n_out} outputs")
    return (c_in // n_out,) * n_out


def infer_shapes(graph: NetworkGraph, input_shape: TensorShape) -> NetworkGraph:
    """Annotate every edge with its tensor shape."""
    shapes: dict[tuple[str, str], TensorShape] = {}
    produced: dict[str, TensorShape] = {}

    def get_in(node: NodeSpec) -> list[TensorShape]:
        return [shapes[(src, node.id)] for src in node.inputs]

    for nid in graph.topological_order():
        node = graph.node(nid)
        ins = get_in(node)
        kind = node.kind
        if kind == "Input":
            out = input_shape
        elif not ins:
            raise ShapeError(f"{nid}: {kind} has no inputs")
        elif kind in WINDOWED:
            x = ins[0]
            k, s = node.kernel_size, node.strides
            top, left, bottom, right = node.pads
            h = window_out(x.h, k, s, top, bottom)
            w = window_out(x.w, k, s, left, right)
            if h < 1 or w < 1:
                raise ShapeError(f"{nid}: non-positive output dimension ({h}, {w})")
            out = TensorShape(h, w, node.filters if kind == "Convolution" else x.c)
        elif kind == "Resize":
            x = ins[0]
            out = TensorShape(x.h * node.scale_factor, x.w * node.scale_factor, x.c)
        elif kind == "Concat":
            if len({(x.h, x.w) for x in ins}) != 1:
                raise ShapeError(f"{nid}: Concat inputs disagree on H/W: {[x.as_tuple() for x in ins]}")
            out = TensorShape(ins[0].h, ins[0].w, sum(x.c for x in ins))
        elif kind == "Add":
            if len(set(ins)) != 1:
                raise ShapeError(f"{nid}: Add shape mismatch: {[x.as_tuple() for x in ins]}")
            out = ins[0]
        else:  # Split, Output and elementwise activations
            out = ins[0]
        produced[nid] = out

        consumers = graph.consumers(nid)
        if kind == "Split":
            groups = split_channels(node, out.c, len(consumers))
            for cons, c in zip(consumers, groups):
                shapes[(nid, cons)] = TensorShape(out.h, out.w, c)
        else:
            for cons in consumers:
                shapes[(nid, cons)] = out
    return replace(graph, shapes=shapes, input_shape=input_shape)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate_graph(graph: NetworkGraph) -> list[Violation]:
    """Collect every structural violation; never raises."""
    out: list[Violation] = []
    kinds = [n.kind for n in graph.nodes]
    if kinds.count("Input") != 1:
        out.append(Violation("graph", "exactly one Input", f"found {kinds.count('Input')} Input nodes"))
    if kinds.count("Output") < 1:
        out.append(Violation("graph", "at least one Output", "no Output node"))
    ids = graph.node_ids
    if len(set(ids)) != len(ids):
        out.append(Violation("graph", "unique ids", "duplicate node ids"))

    for n in graph.nodes:
        for src in n.inputs:
            if src not in graph:
                out.append(Violation(n.id, "dangling input", f"unknown producer {src!r}"))
        if len(set(n.inputs)) != len(n.inputs):
            out.append(Violation(n.id, "distinct inputs", "the same producer is listed twice"))
        n_out = len(graph.consumers(n.id))
        if n.kind == "Input":
            if n.inputs:
                out.append(Violation(n.id, "Input arity", "Input takes no inputs"))
        elif n.kind in JOINS:
            if len(n.inputs) < 2:
                out.append(Violation(n.id, f"{n.kind} arity", "needs at least 2 inputs"))
        elif len(n.inputs) != 1:
            out.append(Violation(n.id, f"{n.kind} arity", f"needs exactly 1 input, has {len(n.inputs)}"))
        if n.kind == "Split" and n_out < 2:
            out.append(Violation(n.id, "Split arity", f"needs at least 2 outputs, has {n_out}"))
        if n.kind == "Output" and n_out:
            out.append(Violation(n.id, "Output arity", "Output must not have consumers"))
        if n.kind not in ("Output",) and n_out == 0:
            out.append(Violation(n.id, "dangling node", "result is never consumed"))
        required, optional = _KIND_FIELDS.get(n.kind, ((), ()))
        if n.kind not in _KIND_FIELDS:
            out.append(Violation(n.id, "known kind", f"unknown kind {n.kind!r}"))
        for name in _OPTIONAL_ATTRS:
            present = getattr(n, name) is not None
            if name in required and not present:
                out.append(Violation(n.id, "required field", f"{n.kind} needs {name}"))
            if present and name not in required and name not in optional:
                out.append(Violation(n.id, "unexpected field", f"{name} not allowed for {n.kind}"))

    try:
        graph.topological_order()
    except NetworkFormatError:
        out.append(Violation("graph", "acyclic", "cycle detected"))
        return out

    if graph.input_shape is None or out:
        return out
    for n in graph.nodes:
        if n.kind == "Input":
            continue
        try:
            ins = [graph.shapes[(src, n.id)] for src in n.inputs]
        except KeyError:
            out.append(Violation(n.id, "edge shapes", "edge has no inferred shape"))
            continue
        if n.kind == "Add" and len(set(ins)) > 1:
            out.append(Violation(n.id, "Add shape mismatch", str([s.as_tuple() for s in ins])))
        if n.kind == "Concat" and len({(s.h, s.w) for s in ins}) > 1:
            out.append(Violation(n.id, "Concat H/W mismatch", str([s.as_tuple() for s in ins])))
    if not out:
        try:
            again = infer_shapes(graph, graph.input_shape)
        except ShapeError as exc:
            out.append(Violation("graph", "shape consistency", str(exc)))
        else:
            if dict(again.shapes) != dict(graph.shapes):
                out.append(Violation("graph", "shape consistency", "edge shapes disagree with inference"))
    return out


def iter_nodes(graph: NetworkGraph, kinds: Iterable[str]) -> Iterable[NodeSpec]:
    kinds = tuple(kinds)
    return (n for n in graph.nodes if n.kind in kinds)


__all__ = [
    "KINDS", "WINDOWED", "JOINS", "NetworkFormatError", "ShapeError", "TensorShape",
    "NodeSpec", "Violation", "NetworkGraph", "parse_network", "load_network",
    "serialize_network", "infer_shapes", "validate_graph", "synthesize_weights",
    "split_channels", "window_out",
]
