import json
import random

import pytest
from hypothesis import given, strategies as st

from streamyolo.graph_ir import (
    NetworkFormatError,
    NetworkGraph,
    ShapeError,
    TensorShape,
    infer_shapes,
    parse_network,
    serialize_network,
    validate_graph,
)
from streamyolo.perf_models import workload_dims
from streamyolo.testing import random_graph

from conftest import chain3, network


def doc(*nodes):
    return {"nodes": list(nodes)}


def single(kind, shape, **kw):
    return parse_network(doc(
        {"id": "in", "kind": "Input", "shape": list(shape)},
        {"id": "x", "kind": kind, "inputs": ["in"], **kw},
        {"id": "out", "kind": "Output", "inputs": ["x"]},
    ))


def test_minimal_chain():
    g = chain3()
    assert len(g.nodes) == 3
    assert g.edges == [("in", "conv"), ("conv", "out")]


def test_parse_from_text():
    g = parse_network(json.dumps(serialize_network(chain3())))
    assert g.node_ids == ["in", "conv", "out"]


def test_cycle_detected():
    with pytest.raises(NetworkFormatError, match="cycle detected"):
        parse_network(doc(
            {"id": "in", "kind": "Input"},
            {"id": "a", "kind": "Convolution", "inputs": ["c"], "kernel_size": 1, "filters": 1},
            {"id": "b", "kind": "Convolution", "inputs": ["a"], "kernel_size": 1, "filters": 1},
            {"id": "c", "kind": "Convolution", "inputs": ["b"], "kernel_size": 1, "filters": 1},
        ))


def test_missing_field_names_node_and_field():
    with pytest.raises(NetworkFormatError, match=r"'c1'.*'kernel_size'"):
        parse_network(doc({"id": "in", "kind": "Input"},
                          {"id": "c1", "kind": "Convolution", "inputs": ["in"], "filters": 4}))


@pytest.mark.parametrize("bad", [
    "not json",
    json.dumps({"nodes": {}}),
    json.dumps(doc({"id": "a", "kind": "Softmax"})),
    json.dumps(doc({"id": "a", "kind": "Input"}, {"id": "a", "kind": "Output", "inputs": ["a"]})),
    json.dumps(doc({"id": "a", "kind": "Input"}, {"id": "b", "kind": "Output", "inputs": ["zz"]})),
    json.dumps(doc({"id": "a", "kind": "Input", "kernel_size": 3})),
])
def test_malformed(bad):
    with pytest.raises(NetworkFormatError):
        parse_network(bad)


def test_conv_same_padding():
    g = single("Convolution", (8, 8, 3), kernel_size=3, filters=16, stride=1, padding=1)
    assert g.out_shape("x") == TensorShape(8, 8, 16)


def test_maxpool_halving():
    g = single("MaxPool", (8, 8, 4), kernel_size=2, stride=2)
    assert g.out_shape("x") == TensorShape(4, 4, 4)


def test_resize_doubles():
    g = single("Resize", (4, 4, 8), scale_factor=2)
    assert g.out_shape("x") == TensorShape(8, 8, 8)


def test_asymmetric_padding():
    g = single("MaxPool", (13, 13, 2), kernel_size=2, stride=1, padding=[0, 0, 1, 1])
    assert g.out_shape("x") == TensorShape(13, 13, 2)


def test_non_positive_dimension():
    with pytest.raises(ShapeError):
        single("Convolution", (2, 2, 1), kernel_size=5, filters=1)


def test_split_groups():
    g = parse_network(doc(
        {"id": "in", "kind": "Input", "shape": [4, 4, 6]},
        {"id": "s", "kind": "Split", "inputs": ["in"], "channels": [2, 4]},
        {"id": "o1", "kind": "Output", "inputs": ["s"]},
        {"id": "o2", "kind": "Output", "inputs": ["s"]},
    ))
    assert g.shapes[("s", "o1")].c == 2 and g.shapes[("s", "o2")].c == 4


def test_bundled_fixtures_valid():
    for name in ("yolov5n", "yolov3-tiny", "yolov5n-small", "yolov3-tiny-small"):
        assert validate_graph(network(name)) == []


def test_add_shape_mismatch_violation():
    nodes = parse_network(doc(
        {"id": "in", "kind": "Input"},
        {"id": "a", "kind": "Convolution", "inputs": ["in"], "kernel_size": 1, "filters": 4},
        {"id": "b", "kind": "Convolution", "inputs": ["in"], "kernel_size": 1, "filters": 8},
        {"id": "add", "kind": "Add", "inputs": ["a", "b"]},
        {"id": "out", "kind": "Output", "inputs": ["add"]},
    )).nodes
    with pytest.raises(ShapeError, match="Add shape mismatch"):
        infer_shapes(NetworkGraph(nodes), TensorShape(8, 8, 2))
    s = {("in", "a"): TensorShape(8, 8, 2), ("in", "b"): TensorShape(8, 8, 2),
         ("a", "add"): TensorShape(8, 8, 4), ("b", "add"): TensorShape(8, 8, 8),
         ("add", "out"): TensorShape(8, 8, 4)}
    v = validate_graph(NetworkGraph(nodes, shapes=s, input_shape=TensorShape(8, 8, 2)))
    assert [x.rule for x in v] == ["Add shape mismatch"]


def test_two_inputs_violation():
    g = parse_network(doc(
        {"id": "i1", "kind": "Input"}, {"id": "i2", "kind": "Input"},
        {"id": "c", "kind": "Concat", "inputs": ["i1", "i2"]},
        {"id": "out", "kind": "Output", "inputs": ["c"]},
    ))
    assert any(v.rule == "exactly one Input" for v in validate_graph(g))


def test_one_way_split_flagged():
    g = parse_network(doc(
        {"id": "in", "kind": "Input", "shape": [2, 2, 2]},
        {"id": "s", "kind": "Split", "inputs": ["in"]},
        {"id": "out", "kind": "Output", "inputs": ["s"]},
    ))
    assert any(v.rule == "Split arity" for v in validate_graph(g))


def test_dangling_node_flagged():
    g = parse_network(doc(
        {"id": "in", "kind": "Input", "shape": [2, 2, 2]},
        {"id": "h", "kind": "HardSwish", "inputs": ["in"]},
        {"id": "out", "kind": "Output", "inputs": ["in"]},
    ))
    assert any(v.rule == "dangling node" for v in validate_graph(g))


@given(st.integers(0, 10_000))
def test_infer_shapes_idempotent(seed):
    g = random_graph(random.Random(seed))
    again = infer_shapes(g, g.input_shape)
    assert dict(again.shapes) == dict(g.shapes)


@given(st.integers(0, 10_000))
def test_serialize_round_trip(seed):
    g = random_graph(random.Random(seed))
    back = parse_network(json.loads(json.dumps(serialize_network(g))))
    assert back == g


@given(st.integers(0, 10_000))
def test_random_graphs_validate(seed):
    assert validate_graph(random_graph(random.Random(seed))) == []


@given(st.integers(0, 10_000))
def test_edge_size_matches_workload(seed):
    g = random_graph(random.Random(seed))
    for n in g.nodes:
        if n.kind in ("Input", "Concat", "Resize", "Split"):
            continue
        h, w, c, _ = workload_dims(g, n.id)
        assert h * w * c == g.in_shape(n.id).size
    for e, s in g.shapes.items():
        assert s.size == s.h * s.w * s.c
