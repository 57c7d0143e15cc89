"""Compare simulated cycle counts against the analytic latency model on
random single-node and chain pipelines.

    python scripts/calibrate_models.py --n 40 --seed 0
"""

from __future__ import annotations

import argparse
import random

from streamyolo.dataflow_sim import build_pipeline, run_sim
from streamyolo.golden_ref import calibrate, calibration_input
from streamyolo.perf_models import node_cycles, total_latency_cycles
from streamyolo.quantizer import QuantConfig, to_fixed
from streamyolo.testing import random_chain, random_design


def one(seed: int, n_nodes: int, qc: QuantConfig) -> tuple[float, float, float, float]:
    rng = random.Random(seed)
    g = random_chain(rng, n_nodes)
    dp = random_design(rng, g, fast_io=True)
    x = calibration_input(g, seed)
    plan = calibrate(g, qc, x)
    xi = to_fixed(x, plan.frac["in"], qc.w_a)
    r = run_sim(build_pipeline(g, dp, plan), xi)
    steady = max(node_cycles(g, n, dp.p[n]) for n in g.node_ids)
    return r.cycles_steady, steady, r.cycles_total, total_latency_cycles(g, dp.p)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-chain", type=int, default=4)
    args = ap.parse_args(argv)
    qc = QuantConfig()
    rng = random.Random(args.seed)
    print("seed,nodes,sim_steady,model_steady,sim_total,model_total,steady_err,total_err")
    worst = [0.0, 0.0]
    for i in range(args.n):
        seed = rng.randrange(1 << 30)
        k = 1 if i % 2 == 0 else rng.randint(2, args.max_chain)
        ss, ms, st, mt = one(seed, k, qc)
        es, et = ss / ms - 1, st / mt - 1
        worst = [max(worst[0], abs(es)), max(worst[1], abs(et))]
        print(f"{seed},{k},{ss},{ms:.0f},{st},{mt:.0f},{es:+.4f},{et:+.4f}")
    print(f"# worst steady error {worst[0]:.2%}, worst end-to-end error {worst[1]:.2%}")


if __name__ == "__main__":
    main()
