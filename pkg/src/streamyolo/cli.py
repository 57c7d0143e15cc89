"""Command-line driver.

    streamyolo flow --network net.json --platform zcu104.toml --out-dir out/

Every command writes into ``--out-dir`` and finishes with ``manifest.json``.
Errors print one line ``error[<stage>]: <message>`` and exit nonzero:
2 bad input, 3 infeasible design, 4 simulator deadlock, 5 check mismatch.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, plots
from .dse import (
    DepthReport,
    InfeasibleError,
    allocate_buffers,
    allocate_dsp,
    analytic_depths,
    evict_largest,
)
from .golden_ref import calibrate, calibration_input, run_reference
from .graph_ir import NetworkFormatError, NetworkGraph, ShapeError, load_network, validate_graph
from .perf_models import (
    DesignError,
    DesignPoint,
    PlatformSpec,
    edge_key,
    evaluate,
    parse_edge_key,
)
from .quantizer import QuantConfig, dequantize_tensor, quantize_weights, to_fixed
from .tensorfile import TensorFileError, read_int_tensors, write_int_tensors, write_quantized_file

log = logging.getLogger("streamyolo")

EXIT_INPUT, EXIT_INFEASIBLE, EXIT_DEADLOCK, EXIT_MISMATCH = 2, 3, 4, 5

# above this many streamed words per frame, "auto" depth analysis is analytic
SIM_WORD_LIMIT = 200_000


class CliError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(message)
        self.stage, self.code = stage, code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory, stage timings and the manifest of one command."""

    def __init__(self, args: argparse.Namespace):
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        for name in ("network", "platform", "design", "depths", "input"):
            p = getattr(args, name, None)
            if p:
                path = Path(p)
                self.inputs[name] = str(path)
                if not path.exists():
                    raise CliError("parse", EXIT_INPUT, f"no such file: {path}")
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out_dir", "func", "verbose")}
        config["input_sha256"] = {k: _sha256(Path(v)) for k, v in self.inputs.items()}
        self.config = config
        self.hash = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]
        self.timings: dict[str, float] = {}
        self.artifacts: list[str] = []

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except CliError:
            raise
        except InfeasibleError as exc:
            raise CliError(name, EXIT_INFEASIBLE, str(exc)) from exc
        except (NetworkFormatError, ShapeError, DesignError, TensorFileError, ValueError, KeyError,
                FileNotFoundError) as exc:
            raise CliError(name, EXIT_INPUT, str(exc)) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def json(self, name: str, obj: Any) -> Path:
        path = self.out / name
        doc = {"config_hash": self.hash, **obj}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.artifacts.append(name)
        return path

    def text(self, name: str, body: str, comment: bool = True) -> Path:
        path = self.out / name
        head = f"# config_hash={self.hash}\n" if comment else ""
        path.write_text(head + body)
        self.artifacts.append(name)
        return path

    def svg(self, name: str, fn, *a) -> None:
        fn(self.out / name, *a, f"config_hash={self.hash}")
        self.artifacts.append(name)

    def finish(self, command: str) -> None:
        manifest = {
            "command": command,
            "tool_version": __version__,
            "config_hash": self.hash,
            "inputs": self.inputs,
            "config": self.config,
            "timings_s": self.timings,
            "artifacts": sorted(self.artifacts),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# --------------------------------------------------------------------------
# loaders
# --------------------------------------------------------------------------

def _graph(path: str) -> NetworkGraph:
    g = load_network(path)
    if g.input_shape is None:
        raise NetworkFormatError(f"{path}: the Input node must declare a shape")
    return g


def _design(path: str, graph: NetworkGraph) -> tuple[DesignPoint, dict]:
    doc = json.loads(Path(path).read_text())
    dp = DesignPoint.from_json(doc)
    missing = [n for n in graph.node_ids if n not in dp.p]
    if missing:
        raise DesignError(f"design has no parallelism for nodes {missing}")
    caps = {parse_edge_key(k): (None if v is None else int(v))
            for k, v in doc.get("channel_capacities", {}).items()}
    return dp, caps


def _load_depths(path: str) -> DepthReport:
    doc = json.loads(Path(path).read_text())
    return DepthReport({parse_edge_key(k): int(v) for k, v in doc["depths"].items()},
                       source=doc.get("source", "file"))


def _depths_json(d: DepthReport) -> dict:
    return {"source": d.source, "depths": {edge_key(e): int(q) for e, q in d.items()}}


def _stream_words(graph: NetworkGraph) -> int:
    return sum(s.size for s in graph.shapes.values())


def _fixed_input(graph, plan, qc, seed):
    x = calibration_input(graph, seed)
    inp = next(n.id for n in graph.nodes if n.kind == "Input")
    return to_fixed(x, plan.frac[inp], qc.w_a)


def _read_input(path: str | None, graph, plan, qc, seed) -> np.ndarray:
    if not path:
        return _fixed_input(graph, plan, qc, seed)
    p = Path(path)
    if p.suffix == ".json":
        doc = json.loads(p.read_text())
        arr = np.asarray(doc["input"] if isinstance(doc, dict) else doc, dtype=np.int64)
    else:
        tensors = read_int_tensors(p)
        if not tensors:
            raise ValueError(f"{p}: no tensors")
        arr = next(iter(tensors.values()))
    arr = arr.reshape(arr.shape[-3:]) if arr.ndim == 4 else arr
    if arr.shape != graph.input_shape.as_tuple():
        raise ValueError(f"input tensor shape {arr.shape} does not match {graph.input_shape.as_tuple()}")
    return arr


def _depth_analysis(graph, dp, qc, method, seed, platform=None, weights=None) -> DepthReport:
    """Simulated depths for small graphs, the analytic estimate otherwise.
    Calibration runs the reference model, so it only happens when simulating."""
    if method == "auto":
        method = "sim" if _stream_words(graph) <= SIM_WORD_LIMIT else "analytic"
    if method == "analytic":
        return analytic_depths(graph)
    from .dataflow_sim import build_pipeline, measure_fifo_depths

    plan = calibrate(graph, qc, seed=seed, weights=weights)

    pipe = build_pipeline(graph, DesignPoint(dict(dp.p)), plan, platform=platform)
    return measure_fifo_depths(pipe, _fixed_input(graph, plan, qc, seed))


def _qc(args) -> QuantConfig:
    return QuantConfig(w_w=args.w_bits, w_a=args.a_bits)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_validate(args, run: Run) -> int:
    with run.stage("parse"):
        g = _graph(args.network)
    with run.stage("validate"):
        v = validate_graph(g)
    run.json("validation.json", {"valid": not v, "violations": [str(x) for x in v],
                                 "nodes": len(g.nodes), "skip_edges": [edge_key(e) for e in g.skip_edges()]})
    if v:
        raise CliError("validate", EXIT_INPUT, f"{len(v)} violation(s); first: {v[0]}")
    return 0


def _quantize(g, qc, run: Run):
    weights = quantize_weights(g, qc.w_w)
    write_quantized_file(run.out / "weights.satq", weights)
    run.artifacts.append("weights.satq")
    rows = {}
    for nid, q in weights.items():
        err = np.abs(dequantize_tensor(q) - g.weight(nid))
        rows[nid] = {"scale": q.params.scale, "zero_point": q.params.zero_point, "wordlength": q.params.wordlength,
                     "max_abs_error": float(err.max()), "mean_abs_error": float(err.mean())}
    run.json("quantization.json", {"w_w": qc.w_w, "w_a": qc.w_a, "layers": rows})
    return weights


def cmd_quantize(args, run: Run) -> int:
    with run.stage("parse"):
        g = _graph(args.network)
    with run.stage("quantize"):
        _quantize(g, _qc(args), run)
    return 0


def _initial_design(args, g) -> DesignPoint:
    if getattr(args, "design", None):
        return _design(args.design, g)[0]
    if getattr(args, "platform", None):
        return DesignPoint(allocate_dsp(g, PlatformSpec.load(args.platform)))
    return DesignPoint({n: 1 for n in g.node_ids})


def cmd_depths(args, run: Run) -> int:
    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
    with run.stage("dse"):
        dp = _initial_design(args, g)
    with run.stage("depths"):
        d = _depth_analysis(g, dp, qc, args.method, args.seed)
    run.json("depths.json", _depths_json(d))
    return 0


def cmd_dse(args, run: Run) -> int:
    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
        plat = PlatformSpec.load(args.platform)
    with run.stage("dse"):
        p = allocate_dsp(g, plat)
    with run.stage("depths"):
        if args.depths:
            d = _load_depths(args.depths)
        else:
            d = _depth_analysis(g, DesignPoint(p), qc, args.method, args.seed, plat)
    with run.stage("buffers"):
        t = allocate_buffers(g, d, plat, qc)
    dp = DesignPoint(p, t)
    run.json("design.json", dp.to_json())
    run.json("depths.json", _depths_json(d))
    return 0


def _report(run: Run, g, dp, plat, qc, d):
    rep = evaluate(g, dp, plat, qc, d)
    run.json("perf_report.json", rep.to_json())
    run.text("perf_report.csv", rep.to_csv())
    m = rep.memory
    run.svg("memory.svg", plots.memory_bars, {"weights": m.weights, "window": m.window, "skip": m.skip})
    run.svg("latency.svg", plots.latency_bars, rep.node_latency)
    return rep


def cmd_report(args, run: Run) -> int:
    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
        plat = PlatformSpec.load(args.platform)
        dp = _design(args.design, g)[0]
    with run.stage("depths"):
        d = _load_depths(args.depths) if args.depths else \
            _depth_analysis(g, dp, qc, args.method, args.seed, plat)
    with run.stage("report"):
        _report(run, g, dp, plat, qc, d)
    return 0


def cmd_flow(args, run: Run) -> int:
    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
        plat = PlatformSpec.load(args.platform)
    with run.stage("validate"):
        v = validate_graph(g)
        if v:
            raise CliError("validate", EXIT_INPUT, f"{len(v)} violation(s); first: {v[0]}")
    with run.stage("quantize"):
        weights = _quantize(g, qc, run)
    with run.stage("dse"):
        p = allocate_dsp(g, plat)
    with run.stage("depths"):
        d = _depth_analysis(g, DesignPoint(p), qc, args.method, args.seed, plat, weights)
    with run.stage("buffers"):
        t = allocate_buffers(g, d, plat, qc)
    dp = DesignPoint(p, t)
    run.json("design.json", dp.to_json())
    run.json("depths.json", _depths_json(d))
    with run.stage("report"):
        rep = _report(run, g, dp, plat, qc, d)
        all_on = evaluate(g, DesignPoint(p), plat, qc, d)
        run.json("summary.json", {
            "dsp_used": rep.dsp_used, "dsp_total": plat.dsp_total,
            "latency_s": rep.total_latency, "offchip_bw_bps": rep.offchip_bw_used,
            "memory_bits": rep.memory.total, "memory_bits_all_on": all_on.memory.total,
            "skip_bits_all_on": all_on.memory.skip, "offchip_buffers": sum(1 for x in t.values() if x == "off"),
        })
    return 0


def cmd_ablation(args, run: Run) -> int:
    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
        plat = PlatformSpec.load(args.platform)
    with run.stage("dse"):
        p = allocate_dsp(g, plat)
    with run.stage("depths"):
        d = _load_depths(args.depths) if args.depths else \
            _depth_analysis(g, DesignPoint(p), qc, args.method, args.seed, plat)
    top = args.top_k
    if len(d) < top:
        print(f"warning[ablation]: only {len(d)} skip buffers, sweeping k = 0..{len(d)}", file=sys.stderr)
        top = len(d)
    rows = []
    with run.stage("ablation"):
        for k in range(top + 1):
            rep = evaluate(g, DesignPoint(p, evict_largest(d, k)), plat, qc, d)
            rows.append((k, rep.mem_skip, rep.mem_total, rep.offchip_bw_used))
    body = "k,mem_skip,mem_total,offchip_bw\n" + "".join(f"{k},{s},{t},{b:.9g}\n" for k, s, t, b in rows)
    run.text("ablation.csv", body)
    ks, ms, mt, bw = zip(*rows)
    run.svg("ablation.svg", plots.ablation_chart, ks, ms, mt, bw)
    return 0


def cmd_simulate(args, run: Run) -> int:
    from .dataflow_sim import build_pipeline, run_sim

    qc = _qc(args)
    with run.stage("parse"):
        g = _graph(args.network)
        dp, caps = _design(args.design, g)
        plat = PlatformSpec.load(args.platform) if args.platform else None
    with run.stage("simulate"):
        plan = calibrate(g, qc, seed=args.seed)
        x = _read_input(args.input, g, plan, qc, args.seed)
        pipe = build_pipeline(g, dp, plan, skip_capacities=caps, platform=plat)
        res = run_sim(pipe, x, trace=True)
    run.json("simulation.json", {
        "cycles_total": res.cycles_total, "cycles_steady": res.cycles_steady,
        "deadlocked": res.deadlocked, "diagnostics": res.diagnostics,
        "node_depth_cycles": res.node_depth, **_depths_json(res.depths),
    })
    run.text("occupancy.csv", res.trace_csv())
    if res.deadlocked:
        for line in res.diagnostics:
            print(f"  {line}", file=sys.stderr)
        raise CliError("simulate", EXIT_DEADLOCK, "deadlock: no token moved with work remaining")
    write_int_tensors(run.out / "outputs.sati", res.outputs)
    run.artifacts.append("outputs.sati")
    if args.check:
        with run.stage("check"):
            ref = run_reference(g, x, plan=plan)
            bad = [o for o in ref if not np.array_equal(ref[o], res.outputs[o])]
        if bad:
            raise CliError("check", EXIT_MISMATCH, f"simulator and reference disagree on {bad}")
        print("check: outputs match the reference model")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamyolo", description="Streaming accelerator toolflow.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, platform=False, platform_required=False):
        sp.add_argument("--network", required=True)
        if platform:
            sp.add_argument("--platform", required=platform_required)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--w-bits", type=int, default=8)
        sp.add_argument("--a-bits", type=int, default=16)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("-v", "--verbose", action="store_true")

    def method(sp):
        sp.add_argument("--method", choices=("auto", "sim", "analytic"), default="auto",
                        help="skip-buffer depth analysis")

    sp = sub.add_parser("validate", help="parse and check a network")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("quantize", help="quantize convolution weights")
    common(sp)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("depths", help="skip-buffer depth analysis")
    common(sp, platform=True)
    sp.add_argument("--design")
    method(sp)
    sp.set_defaults(func=cmd_depths)

    sp = sub.add_parser("dse", help="allocate DSPs and place skip buffers")
    common(sp, platform=True, platform_required=True)
    sp.add_argument("--depths")
    method(sp)
    sp.set_defaults(func=cmd_dse)

    sp = sub.add_parser("simulate", help="run the cycle-stepped simulator")
    common(sp, platform=True)
    sp.add_argument("--design", required=True)
    sp.add_argument("--input")
    sp.add_argument("--check", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="analytic performance report for a design")
    common(sp, platform=True, platform_required=True)
    sp.add_argument("--design", required=True)
    sp.add_argument("--depths")
    method(sp)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("flow", help="validate, quantize, explore and report")
    common(sp, platform=True, platform_required=True)
    method(sp)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("ablation", help="evict the k largest skip buffers, k = 0..top-k")
    common(sp, platform=True, platform_required=True)
    sp.add_argument("--top-k", type=int, default=5)
    sp.add_argument("--depths")
    method(sp)
    sp.set_defaults(func=cmd_ablation)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    run = None
    try:
        try:
            QuantConfig(w_w=args.w_bits, w_a=args.a_bits)
        except ValueError as exc:
            raise CliError("args", EXIT_INPUT, str(exc)) from exc
        run = Run(args)
        code = args.func(args, run)
    except CliError as exc:
        print(f"error[{exc.stage}]: {exc}", file=sys.stderr)
        code = exc.code
    if run is not None:
        run.finish(args.command)
    return code


if __name__ == "__main__":
    sys.exit(main())
