import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from streamyolo.quantizer import (
    QuantConfig,
    QuantizedTensor,
    QuantParams,
    dequantize_tensor,
    from_fixed,
    hardswish_fixed,
    leaky_fixed,
    quant_params,
    quantize_tensor,
    quantize_with,
    requant_factor,
    round_half_away,
    round_shift,
    saturate,
    slope_fixed,
    to_fixed,
)
from streamyolo.golden_ref import hardswish, leaky_relu
from streamyolo.tensorfile import (
    TensorFileError,
    read_int_tensors,
    read_quantized_file,
    read_weight_file,
    write_int_tensors,
    write_quantized_file,
    write_weight_file,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
wordlengths = st.integers(2, 16)


def test_params_unit_range():
    p = quant_params(-1, 1, 8)
    assert p.scale == pytest.approx(2 / 255) and p.zero_point == 0


def test_params_zero_minimum():
    assert quant_params(0, 3.7, 8).zero_point == 128


def test_params_4bit():
    p = quant_params(-2, 6, 4)
    assert p.scale == pytest.approx(8 / 15) and p.zero_point == 4


def test_clamp_at_upper_tie():
    q = quantize_tensor([-1.0, 0.0, 1.0], 8)
    assert q.values.tolist() == [-128, 0, 127]


def test_constant_tensor():
    for L in (2, 8, 16):
        q = quantize_tensor([5.0, 5.0, 5.0], L)
        assert q.values.tolist() == [0, 0, 0]
        assert dequantize_tensor(q) == pytest.approx([5.0, 5.0, 5.0])


def test_dequant_examples():
    p = QuantParams(2 / 255, 0, 8)
    zero = QuantizedTensor(np.array([0]), p, (1,))
    top = QuantizedTensor(np.array([127]), p, (1,))
    assert dequantize_tensor(zero).tolist() == [0.0]
    assert dequantize_tensor(top)[0] == pytest.approx(0.99608, abs=1e-5)


@pytest.mark.parametrize("lo,hi,L", [(math.nan, 1, 8), (0, math.inf, 8), (2, 1, 8), (0, 1, 1), (0, 1, 33)])
def test_param_errors(lo, hi, L):
    with pytest.raises(ValueError):
        quant_params(lo, hi, L)


def test_config_bounds():
    with pytest.raises(ValueError):
        QuantConfig(w_w=1)
    with pytest.raises(ValueError):
        QuantConfig(w_a=40)
    with pytest.raises(ValueError):
        QuantConfig(rounding="even")


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, -0.5, -2.5, 2.4)] == [1, 2, -1, -3, 2]
    assert round_half_away(np.array([0.5, -0.5])).tolist() == [1, -1]


@given(st.lists(finite, min_size=1, max_size=64), wordlengths)
def test_range_invariant(values, L):
    q = quantize_tensor(values, L)
    assert q.values.min() >= -(1 << (L - 1)) and q.values.max() <= (1 << (L - 1)) - 1
    if min(values) <= 0 <= max(values):
        # zero point fits a signed word of width L + 1 when the range spans zero
        assert -(1 << L) <= q.params.zero_point <= (1 << L) - 1


@given(st.lists(finite, min_size=2, max_size=64), wordlengths)
def test_round_trip_bound(values, L):
    assume(max(values) > min(values))
    q = quantize_tensor(values, L)
    err = np.abs(dequantize_tensor(q) - np.array(values))
    assert err.max() <= q.params.scale / 2 + 1e-9 * max(1.0, max(map(abs, values)))


@given(st.lists(finite, min_size=2, max_size=64), wordlengths)
def test_order_preserving(values, L):
    q = quantize_tensor(values, L)
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(q.values[order]) >= 0)


@given(st.integers(0, 2**32 - 1), st.integers(2, 15))
def test_error_non_increasing_in_wordlength(seed, L):
    w = np.random.default_rng(seed).normal(size=256)
    e = [np.abs(dequantize_tensor(quantize_tensor(w, b)) - w).mean() for b in (L, L + 1)]
    assert e[1] <= e[0]


@given(st.floats(1e-6, 1e3), wordlengths)
def test_zero_maps_to_zero_symmetric(a, L):
    p = quant_params(-a, a, L)
    assert quantize_with(np.array([0.0]), p).tolist() == [0]
    assert p.zero_point == 0


@given(st.integers(-2**40, 2**40), st.integers(0, 40))
def test_round_shift_exact(x, s):
    exact = Fraction(x, 1 << s)
    want = math.floor(abs(exact) + Fraction(1, 2)) * (1 if exact >= 0 else -1)
    assert round_shift(x, s) == want


def test_round_shift_left():
    assert round_shift(3, -2) == 12


@given(st.integers(-2**20, 2**20), st.integers(2, 32))
def test_saturate(x, bits):
    y = saturate(x, bits)
    assert -(1 << (bits - 1)) <= y <= (1 << (bits - 1)) - 1
    if -(1 << (bits - 1)) <= x < (1 << (bits - 1)):
        assert y == x


@given(st.floats(1e-12, 1e6))
def test_requant_factor_accuracy(real):
    m, s = requant_factor(real)
    assert (1 << 30) <= m < (1 << 31)
    assert abs(m * 2.0**-s - real) <= real * 2.0**-30


def test_requant_zero():
    assert requant_factor(0.0) == (0, 0)


@given(st.floats(-8, 8), st.integers(6, 12))
def test_hardswish_fixed_close(x, f):
    xi = int(round_half_away(x * 2**f))
    y = hardswish_fixed(xi, f, f, 16) / 2**f
    assert abs(y - hardswish(xi / 2**f)) <= 3 * 2.0**-f


@given(st.floats(-8, 8), st.sampled_from([0.1, 0.01, 0.25]))
def test_leaky_fixed_close(x, slope):
    f = 10
    xi = int(round_half_away(x * 2**f))
    y = leaky_fixed(xi, slope_fixed(slope), f, f, 16) / 2**f
    assert abs(y - leaky_relu(xi / 2**f, slope)) <= 2 * 2.0**-f


def test_fixed_conversion_saturates():
    assert to_fixed([100.0, -100.0, 0.25], 8, 12).tolist() == [2047, -2048, 64]
    assert from_fixed([64], 8).tolist() == [0.25]


# --- binary containers ------------------------------------------------------

def test_weight_file_round_trip(tmp_path):
    w = {"a": np.arange(24, dtype=np.float64).reshape(2, 3, 2, 2) / 7}
    write_weight_file(tmp_path / "w.satw", w)
    back = read_weight_file(tmp_path / "w.satw")
    assert np.allclose(back["a"], w["a"], atol=1e-6)


def test_quantized_file_round_trip(tmp_path):
    q = {"c1": quantize_tensor(np.linspace(-1, 1, 36).reshape(2, 2, 3, 3), 8)}
    write_quantized_file(tmp_path / "q.satq", q)
    back = read_quantized_file(tmp_path / "q.satq")["c1"]
    assert np.array_equal(back.values, q["c1"].values)
    assert back.params == q["c1"].params and back.dims == (2, 2, 3, 3)


def test_int_file_round_trip_and_errors(tmp_path):
    x = np.arange(-12, 12).reshape(2, 3, 4)
    write_int_tensors(tmp_path / "x.sati", {"x": x})
    assert np.array_equal(read_int_tensors(tmp_path / "x.sati")["x"], x)
    with pytest.raises(TensorFileError):
        read_weight_file(tmp_path / "x.sati")
    with pytest.raises(TensorFileError):
        write_int_tensors(tmp_path / "y.sati", {"x": np.zeros((2, 2))})
    (tmp_path / "t.sati").write_bytes(b"SATI\x01\x00")
    with pytest.raises(TensorFileError):
        read_int_tensors(tmp_path / "t.sati")
