import random
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from streamyolo import data_path
from streamyolo.golden_ref import calibrate, calibration_input
from streamyolo.graph_ir import load_network, parse_network
from streamyolo.quantizer import QuantConfig, to_fixed

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def network(name: str):
    return load_network(data_path("networks", f"{name}.json"))


def platform_file(name: str) -> Path:
    return Path(data_path("platforms", f"{name}.toml"))


def chain3(shape=(8, 8, 3), k=3, f=16):
    return parse_network({"nodes": [
        {"id": "in", "kind": "Input", "shape": list(shape)},
        {"id": "conv", "kind": "Convolution", "inputs": ["in"], "kernel_size": k, "filters": f,
         "padding": k // 2},
        {"id": "out", "kind": "Output", "inputs": ["conv"]},
    ]})


def fixed_input(graph, plan, seed=0):
    x = calibration_input(graph, seed)
    in_id = next(n.id for n in graph.nodes if n.kind == "Input")
    return to_fixed(x, plan.frac[in_id], plan.qc.w_a)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def qc():
    return QuantConfig()


@pytest.fixture
def plan_for():
    def make(graph, seed=0):
        return calibrate(graph, QuantConfig(), calibration_input(graph, seed))
    return make


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)
