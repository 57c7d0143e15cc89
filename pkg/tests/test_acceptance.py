"""Acceptance criteria 1-9. Each test records its verdict in
``conftest.ACCEPTANCE`` (printed in the terminal summary) and prints one line."""

import math
import random
import time

import numpy as np

from streamyolo.dataflow_sim import build_pipeline, run_sim, simulate_ideal_fifo, simulate_soft_fifo
from streamyolo.dataflow_sim import SoftFifoConfig
from streamyolo.dse import (
    allocate_dsp,
    analytic_depths,
    evict_largest,
    exhaustive_buffer_search,
    exhaustive_dsp_search,
    place_buffers,
)
from streamyolo.golden_ref import calibrate, calibration_input, hardswish_silu_gap, run_reference
from streamyolo.perf_models import (
    OFF,
    DesignPoint,
    PlatformSpec,
    buffer_bandwidth,
    evaluate,
    node_cycles,
    total_dsp,
    total_latency_cycles,
)
from streamyolo.quantizer import QuantConfig, dequantize_tensor, quantize_tensor
from streamyolo.testing import random_chain, random_design, random_dsp_instance, random_graph

import conftest
from conftest import fixed_input, network, platform_file

QC = QuantConfig()
RATE = 135e9 / (200e6 * QC.w_a) / 2


def record(k: int, ok: bool, detail: str) -> None:
    conftest.ACCEPTANCE[k] = (ok, detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_c1_oracle_equivalence():
    t0 = time.perf_counter()
    bad = []
    for seed in range(100):
        rng = random.Random(10_000 + seed)
        g = random_graph(rng, max_nodes=8, max_dim=16)
        dp = random_design(rng, g)
        plan = calibrate(g, QC, calibration_input(g, seed))
        x = fixed_input(g, plan, seed)
        r = run_sim(build_pipeline(g, dp, plan), x)
        ref = run_reference(g, x, plan=plan)
        if r.deadlocked or any(not np.array_equal(r.outputs[o], ref[o]) for o in ref):
            bad.append(seed)
    dt = time.perf_counter() - t0
    record(1, not bad and dt < 120, f"100 graphs, mismatches={bad}, {dt:.1f}s (limit 120s)")


def test_c2_model_calibration():
    worst_steady = worst_total = 0.0
    for seed in range(20):
        rng = random.Random(20_000 + seed)
        g = random_chain(rng, 1 if seed < 10 else rng.randint(2, 4))
        dp = random_design(rng, g, fast_io=True)
        plan = calibrate(g, QC, calibration_input(g, seed))
        r = run_sim(build_pipeline(g, dp, plan), fixed_input(g, plan, seed))
        assert not r.deadlocked
        steady = max(node_cycles(g, n, dp.p[n]) for n in g.node_ids)
        total = total_latency_cycles(g, dp.p)
        worst_steady = max(worst_steady, abs(r.cycles_steady / steady - 1))
        worst_total = max(worst_total, abs(r.cycles_total / total - 1))
    ok = worst_steady <= 0.10 and worst_total <= 0.15
    record(2, ok, f"20 pipelines, worst steady error {worst_steady:.1%} (limit 10%), "
                  f"worst end-to-end error {worst_total:.1%} (limit 15%)")


def test_c3_greedy_vs_exhaustive():
    worst, over = 1.0, 0
    for seed in range(50):
        rng = random.Random(30_000 + seed)
        g = random_dsp_instance(rng, max_dsp_nodes=4)
        base = total_dsp(g, {n: 1 for n in g.node_ids})
        budget = rng.randint(base, max(base, 200))
        plat = PlatformSpec(budget, 10**9, 200e6, 135e9)
        pg = allocate_dsp(g, plat)
        pe = exhaustive_dsp_search(g, plat)
        over += total_dsp(g, pg) > budget
        worst = max(worst, total_latency_cycles(g, pg) / total_latency_cycles(g, pe))
    record(3, worst <= 1.10 and over == 0,
           f"50 instances, worst greedy/optimal latency {worst:.3f} (limit 1.10), budget overruns {over}")


def test_c4_buffer_placement():
    cap_fail = count_match = count_minimal = 0
    for seed in range(50):
        rng = random.Random(40_000 + seed)
        n = rng.randint(1, 12)
        # S is the feature-map size (sets bandwidth), q <= S the buffer depth
        S = {f"e{i}": rng.randint(16, 4096) for i in range(n)}
        bits = {e: rng.randint(1, S[e]) * QC.w_a for e in S}
        bw = {e: buffer_bandwidth(S[e], OFF, 1e-3, QC.w_a) for e in S}
        avail = rng.uniform(0, 1.1) * sum(bits.values())
        t = place_buffers(bits, avail)
        order = sorted(bits, key=lambda e: -bits[e])
        prefix_fits = any(sum(bits[e] for e in order[i:]) <= avail for i in range(n + 1))
        if prefix_fits and sum(bits[e] for e in t if t[e] != OFF) > avail:
            cap_fail += 1
        n_off = sum(v == OFF for v in t.values())
        t0 = exhaustive_buffer_search(bits, bw, avail, lam=0.0)
        count_match += n_off == sum(v == OFF for v in t0.values())
        # fewest evictions over all feasible placements
        best = min(k for k in range(n + 1)
                   if sum(sorted(bits.values())[: n - k]) <= avail)
        count_minimal += n_off == best
    ok = cap_fail == 0 and count_match == 50
    record(4, ok, f"50 sets, capacity failures {cap_fail}, count equal to lambda=0 exhaustive "
                  f"{count_match}/50, count-minimal {count_minimal}/50")


def test_c5_ablation_shape():
    g = network("yolov5n")
    plat = PlatformSpec.load(platform_file("zcu104"))
    p = allocate_dsp(g, plat)
    d = analytic_depths(g)
    r0 = evaluate(g, DesignPoint(p, evict_largest(d, 0)), plat, QC, d)
    r5 = evaluate(g, DesignPoint(p, evict_largest(d, 5)), plat, QC, d)
    skip_cut = 1 - r5.mem_skip / r0.mem_skip
    total_cut = 1 - r5.mem_total / r0.mem_total
    bw_share = r5.offchip_bw_used / 135e9
    ok = skip_cut >= 0.40 and total_cut >= 0.10 and bw_share <= 0.05
    record(5, ok, f"yolov5n top-5 eviction: skip bits -{skip_cut:.1%} (>=40%), total -{total_cut:.1%} "
                  f"(>=10%), bandwidth {r5.offchip_bw_used / 1e9:.2f} Gbit/s = {bw_share:.2%} of 135 (<=5%)")


def test_c6_quantization_properties():
    rng = np.random.default_rng(60)
    tensors = [rng.normal(0, rng.uniform(0.01, 10), size=rng.integers(1, 200)) for _ in range(1000)]
    worst = 0.0
    means = []
    for L in (4, 8, 16):
        errs = []
        for w in tensors:
            q = quantize_tensor(w, L)
            e = np.abs(dequantize_tensor(q) - w)
            worst = max(worst, float(e.max() / (q.params.scale / 2 + 1e-12)))
            errs.append(e.mean())
        means.append(float(np.mean(errs)))
    monotone = all(b <= a for a, b in zip(means, means[1:]))
    zeros = all(dequantize_tensor(quantize_tensor(np.array([-a, 0.0, a]), L))[1] == 0
                for L in (4, 8, 16) for a in (0.5, 1.0, 557.0, 3.3e-3))
    ok = worst <= 1.0 + 1e-9 and monotone and zeros
    record(6, ok, f"3000 round trips, worst error {worst:.6f} x S/2, mean error by L {means}, "
                  f"symmetric zero exact {zeros}")


def test_c7_hardswish_gap():
    gap = hardswish_silu_gap(-8.0, 8.0)
    record(7, gap < 0.1, f"max |silu - hardswish| on [-8, 8] = {gap:.6f} (limit 0.1)")


def test_c8_soft_fifo():
    bad_order = 0
    for seed in range(100):
        rng = random.Random(80_000 + seed)
        depth, chunk = rng.randint(1, 8), rng.choice([4, 16, 64, 256, 512])
        n = rng.randint(1, depth * chunk)
        stalls = {rng.randint(1, n): rng.randint(1, 500) for _ in range(rng.randint(0, 5))}
        words = [rng.randrange(1 << 16) for _ in range(n)]
        run = simulate_soft_fifo(SoftFifoConfig(depth, chunk), words, rate=RATE, dma_burst=rng.choice([16, 64, 256]),
                                 stalls=stalls)
        bad_order += run.output != words
    added = 0
    for seed in range(50):
        rng = random.Random(81_000 + seed)
        depth, chunk = rng.randint(1, 8), rng.choice([256, 512, 1024])
        n = rng.randint(1, depth * chunk)
        stalls = {rng.randint(1, n): rng.randint(1, 300) for _ in range(rng.randint(0, 4))}
        soft = simulate_soft_fifo(SoftFifoConfig(depth, chunk), range(n), rate=RATE, dma_burst=256, stalls=stalls)
        ideal = simulate_ideal_fifo(depth * chunk, range(n), stalls=stalls)
        added += max(0, soft.steady_stalls - ideal.steady_stalls)
    record(8, bad_order == 0 and added == 0,
           f"100 schedules, order violations {bad_order}; chunk >= burst added steady stalls {added}")


def _shares(name):
    g = network(name)
    plat = PlatformSpec.load(platform_file("zcu104"))
    p = allocate_dsp(g, plat)
    rep = evaluate(g, DesignPoint(p), plat, QC, analytic_depths(g))
    return rep.memory.shares()


def test_c9_memory_shares():
    lines, ok = [], True
    for name in ("yolov5n", "yolov3-tiny"):
        s = _shares(name)
        inside = 0.50 <= s["weights"] <= 0.89 and 0.04 <= s["window"] <= 0.20 and 0.07 <= s["skip"] <= 0.30
        ok &= inside
        lines.append(f"{name} {s['weights']:.1%}/{s['window']:.1%}/{s['skip']:.1%} "
                     f"{'in' if inside else 'outside'} range")
    record(9, ok, "weights/window/skip shares: " + "; ".join(lines) + " (ranges 50-89/4-20/7-30%)")
