"""Skip-buffer eviction sweep: memory and bandwidth as the k deepest
buffers move off-chip.

    python scripts/run_ablation.py --network yolov5n --platform zcu104 --top-k 8
"""

from __future__ import annotations

import argparse
from pathlib import Path

from streamyolo import data_path, plots
from streamyolo.dse import allocate_dsp, analytic_depths, evict_largest
from streamyolo.graph_ir import load_network
from streamyolo.perf_models import DesignPoint, PlatformSpec, evaluate
from streamyolo.quantizer import QuantConfig


def resolve(kind: str, name: str, ext: str) -> Path:
    p = Path(name)
    return p if p.exists() else Path(data_path(kind, f"{name}.{ext}"))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--network", default="yolov5n")
    ap.add_argument("--platform", default="zcu104")
    ap.add_argument("--top-k", type=int, default=5)
    ap.add_argument("--w-bits", type=int, default=8)
    ap.add_argument("--a-bits", type=int, default=16)
    ap.add_argument("--svg", type=Path)
    args = ap.parse_args(argv)
    g = load_network(resolve("networks", args.network, "json"))
    plat = PlatformSpec.load(resolve("platforms", args.platform, "toml"))
    qc = QuantConfig(args.w_bits, args.a_bits)
    p = allocate_dsp(g, plat)
    d = analytic_depths(g)
    rows = []
    for k in range(min(args.top_k, len(d)) + 1):
        r = evaluate(g, DesignPoint(p, evict_largest(d, k)), plat, qc, d)
        rows.append((k, r.mem_skip, r.mem_total, r.offchip_bw_used))
    base_skip, base_total = rows[0][1], rows[0][2]
    print("k,mem_skip_mbit,mem_total_mbit,skip_cut,total_cut,offchip_gbps")
    for k, s, t, b in rows:
        print(f"{k},{s / 1e6:.3f},{t / 1e6:.3f},{1 - s / base_skip:.1%},{1 - t / base_total:.1%},{b / 1e9:.3f}")
    if args.svg:
        ks, ms, mt, bw = zip(*rows)
        plots.ablation_chart(args.svg, ks, ms, mt, bw, args.network)


if __name__ == "__main__":
    main()
