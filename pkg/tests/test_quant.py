import numpy as np
import pytest
from hypothesis import given, strategies as st

from inpaintq import _pykernels
from inpaintq.errors import (
    AccumulatorOverflow,
    DegenerateRange,
    InvalidRange,
    ShapeMismatch,
)
from inpaintq.quant import (
    QuantizedTensor,
    QuantParams,
    calibrate,
    clip,
    dequantize,
    dequantize_array,
    qat_total_loss,
    qconv2d,
    qmatmul,
    quantize,
)
from inpaintq.tensor import Tensor

from conftest import loop_conv2d, loop_matmul


def test_clip_examples():
    assert clip(5, -128, 127) == 5
    assert clip(300, -128, 127) == 127
    assert clip(-200, -128, 127) == -128
    with pytest.raises(InvalidRange):
        clip(0, 1, -1)


def test_calibrate_symmetric():
    p = calibrate(np.linspace(-1, 1, 11), symmetry="symmetric")
    assert p.scale == pytest.approx(1 / 127)
    assert p.zero_point == 0


def test_calibrate_asymmetric():
    p = calibrate(np.linspace(0, 2.55, 52), symmetry="asymmetric")
    assert p.scale == pytest.approx(0.01)
    assert p.zero_point == -128


def test_calibrate_constant_is_error():
    with pytest.raises(DegenerateRange):
        calibrate(np.full(10, 3.0))


def test_calibrate_percentile_narrower_than_minmax(rng):
    v = np.concatenate([rng.standard_normal(10_000), [50.0]])
    p_mm = calibrate(v, "minmax")
    p_pc = calibrate(v, "percentile", percentile=99.9)
    assert p_pc.scale < p_mm.scale


def test_calibrate_per_channel():
    w = np.stack([np.linspace(-1, 1, 8), np.linspace(-4, 4, 8)])
    p = calibrate(w, axis=0)
    assert p.axis == 0
    assert np.allclose(p.scale, [1 / 127, 4 / 127])
    q = quantize(w, p)
    assert q.payload[0].max() == 127 and q.payload[1].max() == 127


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50), st.sampled_from(["symmetric", "asymmetric"]))
def test_calibrated_params_are_valid(values, symmetry):
    if max(values) == min(values):
        return
    p = calibrate(values, symmetry=symmetry)
    assert p.scale > 0
    assert -128 <= p.zero_point <= 127
    if symmetry == "symmetric":
        assert p.zero_point == 0


def test_quantize_examples():
    p = QuantParams(0.01, 0)
    assert quantize([0.5], p).payload[0] == 50
    assert quantize([0.0], QuantParams(0.37, 0)).payload[0] == 0
    assert quantize([10.0], p).payload[0] == 127
    assert quantize([-10.0], p).payload[0] == -128


def test_quantize_ties_to_even():
    p = QuantParams(1.0, 0)
    assert quantize([0.5, 1.5, 2.5, -0.5], p).payload.tolist() == [0, 2, 2, 0]


def test_dequantize_examples():
    q = QuantizedTensor(np.array([50], dtype=np.int8), QuantParams(0.01, 0))
    assert dequantize(q).data[0] == pytest.approx(0.5)
    q = QuantizedTensor(np.array([-7], dtype=np.int8), QuantParams(0.3, -7))
    assert dequantize(q).data[0] == 0.0


def test_invalid_params():
    with pytest.raises(InvalidRange):
        QuantParams(0.0, 0)
    with pytest.raises(InvalidRange):
        QuantParams(0.1, 200)


@pytest.mark.parametrize("symmetry", ["symmetric", "asymmetric"])
def test_roundtrip_error_bound(symmetry, rng):
    lo, hi = -0.7, 2.3
    w = rng.uniform(lo, hi, 100_000)
    p = calibrate(np.array([lo, hi]), symmetry=symmetry)
    err = np.abs(w - dequantize_array(quantize(w, p)))
    assert err.max() <= p.scale / 2 * (1 + 1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(1e-4, 10), st.integers(-128, 127))
def test_quantize_saturates(values, s, z):
    q = quantize(values, QuantParams(s, z))
    assert q.payload.dtype == np.int8


def test_qat_total_loss():
    assert qat_total_loss(1.0, [1, 2], [1, 1], 0.5) == pytest.approx(1.5)
    assert qat_total_loss(0.3, [1, 2], [1, 2], 4.0) == 0.3
    assert qat_total_loss(0.3, [1, 2], [5, 5], 0.0) == 0.3
    with pytest.raises(ShapeMismatch):
        qat_total_loss(0.0, [1, 2], [1, 2, 3], 1.0)


@given(st.floats(0, 10), st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0, 5))
def test_qat_penalty_nonnegative(task, w, lam):
    w_hat = np.round(np.asarray(w), 1)
    assert qat_total_loss(task, w, w_hat, lam) >= task


# --- kernels ---


def dyadic_params(rng):
    """Power-of-two scales keep every float64 product in the oracle exact."""
    return QuantParams(2.0 ** -int(rng.integers(1, 10)), int(rng.integers(-20, 21)))


def random_qt(rng, shape, params):
    return QuantizedTensor(rng.integers(-128, 128, shape).astype(np.int8), params, shape)


def test_qmatmul_scalar_example():
    a = QuantizedTensor(np.array([[50]], dtype=np.int8), QuantParams(0.01, 0))
    assert qmatmul(a, a).data[0] == pytest.approx(0.25)


def test_qmatmul_identity(rng):
    p = QuantParams(1.0, 0)
    eye = QuantizedTensor(np.eye(5, dtype=np.int8), p)
    a = quantize(rng.standard_normal((5, 3)), calibrate(rng.standard_normal((5, 3))))
    assert np.array_equal(qmatmul(eye, a).numpy(), dequantize_array(a))


def test_qmatmul_matches_loop_oracle(rng):
    for _ in range(20):
        m, k, n = rng.integers(1, 9, 3)
        a = random_qt(rng, (m, k), dyadic_params(rng))
        b = random_qt(rng, (k, n), dyadic_params(rng))
        got = qmatmul(a, b).numpy()
        want = loop_matmul(dequantize_array(a), dequantize_array(b))
        assert np.max(np.abs(got - want)) == 0


def test_qmatmul_per_channel(rng):
    a_params = QuantParams(2.0 ** -rng.integers(1, 8, 4).astype(float), rng.integers(-5, 5, 4), 0)
    b_params = QuantParams(2.0 ** -rng.integers(1, 8, 3).astype(float), rng.integers(-5, 5, 3), 1)
    a = random_qt(rng, (4, 6), a_params)
    b = random_qt(rng, (6, 3), b_params)
    assert np.array_equal(qmatmul(a, b).numpy(), loop_matmul(dequantize_array(a), dequantize_array(b)))


def test_qmatmul_general_scales_within_ulps(rng):
    a = quantize(rng.standard_normal((8, 8)), calibrate(rng.standard_normal((8, 8)), symmetry="asymmetric"))
    b = quantize(rng.standard_normal((8, 8)), calibrate(rng.standard_normal((8, 8)), symmetry="asymmetric"))
    got = qmatmul(a, b).numpy()
    want = loop_matmul(dequantize_array(a), dequantize_array(b))
    assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_qmatmul_shape_and_overflow():
    p = QuantParams(1.0, 0)
    a = QuantizedTensor(np.zeros((2, 3), dtype=np.int8), p)
    with pytest.raises(ShapeMismatch):
        qmatmul(a, a)
    big = QuantizedTensor(np.full((1, 2**16 + 1), 1, dtype=np.int8), p)
    col = QuantizedTensor(np.full((2**16 + 1, 1), 1, dtype=np.int8), p)
    with pytest.raises(AccumulatorOverflow):
        qmatmul(big, col)
    # within 2^16 but with asymmetric zero points the worst case exceeds int32
    zp = QuantParams(1.0, 127)
    a = QuantizedTensor(np.full((1, 2**16), -128, dtype=np.int8), zp)
    b = QuantizedTensor(np.full((2**16, 1), -128, dtype=np.int8), zp)
    with pytest.raises(AccumulatorOverflow):
        qmatmul(a, b)


def test_qconv_unit_kernel(rng):
    x = quantize(rng.uniform(-1, 1, (1, 5, 5)), calibrate(np.array([-1.0, 1.0])))
    k = QuantizedTensor(np.ones((1, 1, 1, 1), dtype=np.int8), QuantParams(1.0, 0))
    assert np.array_equal(qconv2d(x, k).numpy(), dequantize_array(x))


def test_qconv_delta_image():
    img = np.zeros((1, 7, 7))
    img[0, 3, 3] = 1.0
    x = quantize(img, QuantParams(1 / 64, 0))
    kv = np.arange(9, dtype=float).reshape(1, 1, 3, 3) - 4
    k = quantize(kv, QuantParams(1.0, 0))
    out = qconv2d(x, k, padding=1).numpy()[0]
    # cross-correlation places the flipped kernel around the delta
    assert np.array_equal(out[2:5, 2:5], kv[0, 0, ::-1, ::-1])


def test_qconv_matches_loop_oracle(rng):
    for _ in range(10):
        c, h, w = 1, 4, 4
        o, kh, kw = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = random_qt(rng, (c, h, w), dyadic_params(rng))
        kp = QuantParams(2.0 ** -rng.integers(1, 8, o).astype(float), rng.integers(-9, 9, o), 0)
        k = random_qt(rng, (o, c, kh, kw), kp)
        got = qconv2d(x, k, stride, pad).numpy()
        want = loop_conv2d(dequantize_array(x), dequantize_array(k), stride, pad)
        assert np.array_equal(got, want)


def test_qconv_channel_mismatch(rng):
    x = random_qt(rng, (2, 4, 4), QuantParams(1.0, 0))
    k = random_qt(rng, (1, 3, 2, 2), QuantParams(1.0, 0))
    with pytest.raises(ShapeMismatch):
        qconv2d(x, k)


def test_backends_agree(rng):
    from inpaintq import kernels

    a = rng.integers(-128, 128, (7, 9)).astype(np.int8)
    b = rng.integers(-128, 128, (9, 5)).astype(np.int8)
    za = rng.integers(-20, 20, 7).astype(np.int32)
    zb = rng.integers(-20, 20, 5).astype(np.int32)
    assert np.array_equal(kernels.qmatmul_acc(a, b, za, zb), _pykernels.qmatmul_acc(a, b, za, zb))
    x = rng.integers(-128, 128, (2, 9, 8)).astype(np.int8)
    w = rng.integers(-128, 128, (3, 2, 3, 2)).astype(np.int8)
    zw = rng.integers(-5, 5, 3).astype(np.int32)
    for stride, pad in [(1, 0), (2, 1), (3, 2)]:
        assert np.array_equal(
            kernels.qconv2d_acc(x, w, 4, zw, stride, pad),
            _pykernels.qconv2d_acc(x, w, 4, zw, stride, pad),
        )


def test_quantized_tensor_file_roundtrip(tmp_path, rng):
    w = rng.standard_normal((3, 2, 2, 2))
    q = quantize(w, calibrate(w, axis=0, symmetry="asymmetric"))
    q.save(tmp_path / "q.bin")
    back = QuantizedTensor.load(tmp_path / "q.bin")
    assert back.shape == q.shape
    assert np.array_equal(back.payload, q.payload)
    assert np.array_equal(back.params.scale, q.params.scale)
    assert back.params.axis == 0


def test_dequantize_returns_tensor():
    q = quantize([0.1, 0.2], QuantParams(0.1, 0))
    assert isinstance(dequantize(q), Tensor)
