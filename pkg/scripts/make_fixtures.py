"""Regenerate the bundled network and platform fixtures.

Networks follow the public layer tables of YOLOv5n (v6 layout) and
YOLOv3-tiny. SiLU is replaced by HardSwish. Full-size variants are for
model-only runs; the ``-small`` variants shrink the input and divide
channel counts so the simulator finishes in seconds.

    python scripts/make_fixtures.py
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "streamyolo" / "data"


class Builder:
    def __init__(self, shape, div: int = 1, act: str = "HardSwish"):
        self.nodes: list[dict] = [{"id": "input", "kind": "Input", "shape": list(shape)}]
        self.div = div
        self.act = act
        self.n = 0

    def _id(self, stem):
        self.n += 1
        return f"{stem}{self.n}"

    def ch(self, c):
        return max(1, c // self.div)

    def add(self, kind, inputs, **kw):
        nid = self._id(kind.lower()[:4])
        self.nodes.append({"id": nid, "kind": kind, "inputs": list(inputs), **kw})
        return nid

    def conv(self, x, c, k=1, s=1, p=None, act=True):
        pad = k // 2 if p is None else p
        y = self.add("Convolution", [x], kernel_size=k, filters=self.ch(c), stride=s, padding=pad)
        if not act:
            return y
        if self.act == "LeakyReLU":
            return self.add("LeakyReLU", [y], slope=0.1)
        return self.add("HardSwish", [y])

    def output(self, x):
        return self.add("Output", [x])

    def dump(self, path: Path):
        path.write_text(json.dumps({"nodes": self.nodes}, indent=1) + "\n")


def c3(b: Builder, x, c2, n=1, shortcut=True):
    c_ = c2 // 2
    a = b.conv(x, c_, 1)
    skip = b.conv(x, c_, 1)
    for _ in range(n):
        h = b.conv(b.conv(a, c_, 1), c_, 3)
        a = b.add("Add", [a, h]) if shortcut else h
    return b.conv(b.add("Concat", [a, skip]), c2, 1)


def sppf(b: Builder, x, c2, k=5):
    x = b.conv(x, c2 // 2, 1)
    y1 = b.add("MaxPool", [x], kernel_size=k, stride=1, padding=k // 2)
    y2 = b.add("MaxPool", [y1], kernel_size=k, stride=1, padding=k // 2)
    y3 = b.add("MaxPool", [y2], kernel_size=k, stride=1, padding=k // 2)
    return b.conv(b.add("Concat", [x, y1, y2, y3]), c2, 1)


def yolov5n(size: int, div: int = 1, classes: int = 80) -> Builder:
    b = Builder((size, size, 3), div)
    x = b.conv("input", 16, 6, 2, 2)
    x = b.conv(x, 32, 3, 2)
    x = c3(b, x, 32, 1)
    x = b.conv(x, 64, 3, 2)
    p3 = c3(b, x, 64, 2)
    x = b.conv(p3, 128, 3, 2)
    p4 = c3(b, x, 128, 3)
    x = b.conv(p4, 256, 3, 2)
    x = c3(b, x, 256, 1)
    x = sppf(b, x, 256)
    h10 = b.conv(x, 128, 1)
    x = b.add("Resize", [h10], scale_factor=2)
    x = c3(b, b.add("Concat", [x, p4]), 128, 1, False)
    h14 = b.conv(x, 64, 1)
    x = b.add("Resize", [h14], scale_factor=2)
    out3 = c3(b, b.add("Concat", [x, p3]), 64, 1, False)
    x = b.conv(out3, 64, 3, 2)
    out4 = c3(b, b.add("Concat", [x, h14]), 128, 1, False)
    x = b.conv(out4, 128, 3, 2)
    out5 = c3(b, b.add("Concat", [x, h10]), 256, 1, False)
    det = 3 * (classes + 5)
    for o in (out3, out4, out5):
        b.output(b.conv(o, det * b.div, 1, act=False))
    return b


def yolov3_tiny(size: int, div: int = 1, classes: int = 80) -> Builder:
    b = Builder((size, size, 3), div, act="LeakyReLU")
    x = "input"
    for c in (16, 32, 64, 128):
        x = b.conv(x, c, 3)
        x = b.add("MaxPool", [x], kernel_size=2, stride=2, padding=0)
    route = b.conv(x, 256, 3)
    x = b.add("MaxPool", [route], kernel_size=2, stride=2, padding=0)
    x = b.conv(x, 512, 3)
    x = b.add("MaxPool", [x], kernel_size=2, stride=1, padding=[0, 0, 1, 1])
    x = b.conv(x, 1024, 3)
    mid = b.conv(x, 256, 1)
    x = b.conv(mid, 512, 3)
    det = 3 * (classes + 5)
    b.output(b.conv(x, det * b.div, 1, act=False))
    x = b.conv(mid, 128, 1)
    x = b.add("Resize", [x], scale_factor=2)
    x = b.conv(b.add("Concat", [x, route]), 256, 3)
    b.output(b.conv(x, det * b.div, 1, act=False))
    return b


# name, DSP slices, on-chip bits (BRAM + URAM), clock
PLATFORMS = {
    "zcu104": (1728, 38_000_000, 200e6),
    "vcu110": (1800, 132_900_000, 200e6),
    "vcu118": (6840, 345_900_000, 250e6),
}


def write_platform(path: Path, name: str, dsp: int, bits: int, f: float, bw: float = 135e9):
    path.write_text(
        f'name = "{name}"\n'
        f"dsp_total = {dsp}\n"
        f"onchip_bits = {bits}\n"
        f"f_clk = {f:.1f}\n"
        f"offchip_bw = {bw:.1f}\n"
        "dma_burst = 256\n"
    )


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    nets = args.out / "networks"
    plats = args.out / "platforms"
    nets.mkdir(parents=True, exist_ok=True)
    plats.mkdir(parents=True, exist_ok=True)
    yolov5n(640).dump(nets / "yolov5n.json")
    yolov5n(32, div=4, classes=1).dump(nets / "yolov5n-small.json")
    yolov3_tiny(416).dump(nets / "yolov3-tiny.json")
    yolov3_tiny(32, div=8, classes=1).dump(nets / "yolov3-tiny-small.json")
    for name, (dsp, bits, f) in PLATFORMS.items():
        write_platform(plats / f"{name}.toml", name, dsp, bits, f)
    print(f"fixtures written under {args.out}")


if __name__ == "__main__":
    main()
