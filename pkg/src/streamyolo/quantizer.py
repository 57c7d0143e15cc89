"""Layer-wise blocking floating-point weight quantization and the
fixed-point activation arithmetic shared by the simulator and the
reference model.

Weights use one (scale, zero point) pair per layer::

    S  = (w_max - w_min) / (2**L - 1)
    Z  = round(w_min / S) + 2**(L-1)
    w' = clamp(round(w / S - Z), -2**(L-1), 2**(L-1) - 1)
    w ~ (w' + Z) * S

Activations are ``w_a``-bit signed integers with a per-node power-of-two
scale (``frac`` fractional bits).
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

EPS = 1e-12
HARDSWISH_SHIFT = 16
HARDSWISH_RECIP6 = round(2**HARDSWISH_SHIFT / 6)
LEAKY_SHIFT = 16


@dataclass(frozen=True)
class QuantConfig:
    w_w: int = 8
    w_a: int = 16
    rounding: str = "half_away"

    def __post_init__(self):
        for name in ("w_w", "w_a"):
            v = getattr(self, name)
            if not 2 <= v <= 32:
                raise ValueError(f"{name}={v} outside [2, 32]")
        if self.rounding != "half_away":
            raise ValueError(f"unsupported rounding rule {self.rounding!r}")


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    wordlength: int


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray
    params: QuantParams
    dims: tuple[int, ...]

    def effective(self) -> np.ndarray:
        """Integer weights with the zero point folded in, ``w' + Z``."""
        return self.values.astype(np.int64) + self.params.zero_point


def round_half_away(x):
    """Round to nearest, ties away from zero. Works on scalars and arrays."""
    if isinstance(x, np.ndarray):
        return np.sign(x) * np.floor(np.abs(x) + 0.5)
    return math.copysign(math.floor(abs(x) + 0.5), x)


def _round_fraction(x: Fraction) -> int:
    r = math.floor(abs(x) + Fraction(1, 2))
    return r if x >= 0 else -r


def signed_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def quant_params(w_min: float, w_max: float, L: int) -> QuantParams:
    if not (math.isfinite(w_min) and math.isfinite(w_max)):
        raise ValueError("quantization range must be finite")
    if w_min > w_max:
        raise ValueError(f"w_min={w_min} exceeds w_max={w_max}")
    if not 2 <= L <= 32:
        raise ValueError(f"wordlength {L} outside [2, 32]")
    if w_min == w_max:
        # constant tensor: w' = 0 and Z * S reproduces the constant
        scale = max(abs(w_min), EPS) / ((1 << (L - 1)) - 1)
        return QuantParams(scale, int(round_half_away(w_min / scale)), L)
    scale = (w_max - w_min) / ((1 << L) - 1)
    # exact rational w_min / S so that ties (e.g. symmetric ranges) round as intended
    ratio = Fraction(w_min) * ((1 << L) - 1) / (Fraction(w_max) - Fraction(w_min))
    zero = _round_fraction(ratio) + (1 << (L - 1))
    return QuantParams(scale, zero, L)


def quantize_with(w: np.ndarray, params: QuantParams) -> np.ndarray:
    lo, hi = signed_range(params.wordlength)
    q = round_half_away(np.asarray(w, dtype=np.float64) / params.scale - params.zero_point)
    return np.clip(q, lo, hi).astype(np.int64)


def quantize_tensor(w, L: int) -> QuantizedTensor:
    arr = np.asarray(w, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    params = quant_params(float(arr.min()), float(arr.max()), L)
    return QuantizedTensor(quantize_with(arr, params), params, tuple(arr.shape))


def dequantize_tensor(q: QuantizedTensor) -> np.ndarray:
    return (q.values.astype(np.float64) + q.params.zero_point) * q.params.scale


# --------------------------------------------------------------------------
# fixed-point helpers
# --------------------------------------------------------------------------

def round_shift(x: int, shift: int) -> int:
    """``x / 2**shift`` rounded half away from zero (left shift if negative)."""
    if shift <= 0:
        return x << -shift
    half = 1 << (shift - 1)
    if x >= 0:
        return (x + half) >> shift
    return -((-x + half) >> shift)


def saturate(x: int, bits: int) -> int:
    lo, hi = signed_range(bits)
    return lo if x < lo else hi if x > hi else x


def requant_factor(real: float) -> tuple[int, int]:
    """Integer multiplier/shift pair approximating ``real`` (31-bit mantissa)."""
    if real == 0:
        return 0, 0
    m, e = math.frexp(real)
    mult = round(m * (1 << 31))
    shift = 31 - e
    if mult == 1 << 31:
        mult >>= 1
        shift -= 1
    return mult, shift


def rescale(x: int, f_in: int, f_out: int) -> int:
    return round_shift(x, f_in - f_out)


def hardswish_fixed(x: int, f_in: int, f_out: int, bits: int) -> int:
    """x * relu6(x + 3) / 6 on ``f_in``-fractional integers."""
    three = 3 << f_in
    r = min(max(x + three, 0), 2 * three)
    prod = x * r * HARDSWISH_RECIP6
    return saturate(round_shift(prod, HARDSWISH_SHIFT + 2 * f_in - f_out), bits)


def leaky_fixed(x: int, slope_q: int, f_in: int, f_out: int, bits: int) -> int:
    if x >= 0:
        return saturate(rescale(x, f_in, f_out), bits)
    return saturate(round_shift(x * slope_q, LEAKY_SHIFT + f_in - f_out), bits)


def slope_fixed(slope: float) -> int:
    return int(round_half_away(slope * (1 << LEAKY_SHIFT)))


def accumulator_bits(w_a: int, k: int, c: int) -> int:
    """Overflow-free convolution accumulator width."""
    return 2 * w_a + math.ceil(math.log2(k * k * c)) if k * k * c > 1 else 2 * w_a


def to_fixed(x, frac: int, bits: int) -> np.ndarray:
    lo, hi = signed_range(bits)
    q = round_half_away(np.asarray(x, dtype=np.float64) * 2.0**frac)
    return np.clip(q, lo, hi).astype(np.int64)


def from_fixed(x, frac: int) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * 2.0**-frac


# --------------------------------------------------------------------------
# whole-network fixed-point plan
# --------------------------------------------------------------------------

ROUTING_KINDS = ("Input", "Output", "MaxPool", "Resize", "Split")


@dataclass(frozen=True)
class FixedPointPlan:
    """Everything needed to run a graph in integer arithmetic.

    ``frac`` gives the fractional bits of each node's output stream;
    ``weights`` the quantized convolution weights keyed by node id.
    """

    qc: QuantConfig
    frac: Mapping[str, int]
    weights: Mapping[str, QuantizedTensor] = field(default_factory=dict)

    def conv_requant(self, node_id: str, src_frac: int) -> tuple[int, int]:
        scale = self.weights[node_id].params.scale
        return requant_factor(scale * 2.0 ** (self.frac[node_id] - src_frac))

    def input_frac(self, graph, node_id: str, index: int = 0) -> int:
        return self.frac[graph.node(node_id).inputs[index]]


def frac_bits_for(max_abs: float, w_a: int) -> int:
    """Fractional bits leaving one bit of headroom above ``max_abs``."""
    if max_abs <= 0:
        return w_a - 2
    f = w_a - 2 - math.ceil(math.log2(max_abs))
    return int(min(max(f, 0), 2 * w_a))


def quantize_weights(graph, w_w: int) -> dict[str, QuantizedTensor]:
    return {n.id: quantize_tensor(graph.weight(n.id), w_w)
            for n in graph.nodes if n.kind == "Convolution"}


def make_plan(graph, qc: QuantConfig, ranges: Mapping[str, float],
              weights: Mapping[str, QuantizedTensor] | None = None) -> FixedPointPlan:
    """Choose per-node output fractional bits from observed dynamic ranges.

    Routing kinds keep their input's scale; Concat takes the coarsest input
    scale so that no input overflows.
    """
    frac: dict[str, int] = {}
    for nid in graph.topological_order():
        node = graph.node(nid)
        if node.kind == "Input":
            frac[nid] = frac_bits_for(ranges.get(nid, 1.0), qc.w_a)
        elif node.kind in ROUTING_KINDS:
            frac[nid] = frac[node.inputs[0]]
        elif node.kind == "Concat":
            frac[nid] = min(frac[s] for s in node.inputs)
        else:
            frac[nid] = frac_bits_for(ranges.get(nid, 1.0), qc.w_a)
    if weights is None:
        weights = quantize_weights(graph, qc.w_w)
    return FixedPointPlan(qc, frac, dict(weights))
