import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prn import tensorops as ops
from prn.imagepipe import bicubic_resize
from oracles import central_difference, naive_bicubic, naive_conv2d, rel_error, zero_stuff_deconv


def random_layer(rng, cin, cout, k, dilation=1, dtype=np.float64):
    spec = ops.ConvSpec(cin, cout, (k, k), dilation=dilation)
    w = rng.standard_normal(spec.weight_shape).astype(dtype)
    b = rng.standard_normal(cout).astype(dtype)
    return ops.LayerParams(w, b, spec)


def random_deconv(rng, cin, cout, stride, dtype=np.float64):
    spec = ops.deconv_spec(cin, cout, stride)
    w = rng.standard_normal(spec.weight_shape).astype(dtype)
    b = rng.standard_normal(cout).astype(dtype)
    return ops.LayerParams(w, b, spec)


# conv2d forward


def test_identity_kernel():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    p = ops.LayerParams(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32), ops.ConvSpec(1, 1, (1, 1)))
    np.testing.assert_array_equal(ops.conv2d_forward(x, p), x)


def test_dilated_impulse_taps():
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4, 4] = 1.0
    p = ops.LayerParams(np.ones((1, 1, 3, 3)), np.zeros(1), ops.ConvSpec(1, 1, (3, 3), dilation=2))
    y = ops.conv2d_forward(x, p)[0, 0]
    rows, cols = np.nonzero(y)
    assert set(rows - 4) == {-2, 0, 2} and set(cols - 4) == {-2, 0, 2}
    assert len(rows) == 9


@pytest.mark.parametrize("k,d", [(3, 1), (3, 2), (5, 1), (5, 2), (3, 3)])
def test_impulse_support_extent(k, d):
    size = (k - 1) * d + 7
    x = np.zeros((1, 1, size, size))
    x[0, 0, size // 2, size // 2] = 1.0
    p = ops.LayerParams(np.ones((1, 1, k, k)), np.zeros(1), ops.ConvSpec(1, 1, (k, k), dilation=d))
    y = ops.conv2d_forward(x, p)[0, 0]
    rows = np.nonzero(y.any(axis=1))[0]
    assert rows.max() - rows.min() + 1 == (k - 1) * d + 1


def test_matches_naive_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 8, 8))
    p = random_layer(rng, 3, 3, 3)
    ref = naive_conv2d(x, p.weights, p.bias, 1, 1, 1)
    assert np.max(np.abs(ops.conv2d_forward(x, p) - ref)) <= 1e-5


def test_float32_matches_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 8, 16, 16)).astype(np.float32)
    p = random_layer(rng, 8, 8, 3, dilation=2, dtype=np.float32)
    ref = naive_conv2d(x.astype(np.float64), p.weights.astype(np.float64), p.bias.astype(np.float64), 2, 2, 2)
    assert np.max(np.abs(ops.conv2d_forward(x, p) - ref)) <= 1e-5


def test_shape_mismatch_raises():
    p = ops.xavier_init(ops.ConvSpec(2, 4, (3, 3)), 0)
    with pytest.raises(ops.DimensionError):
        ops.conv2d_forward(np.zeros((1, 3, 5, 5), np.float32), p)
    with pytest.raises(ops.DimensionError):
        ops.conv2d_forward(np.zeros((3, 5, 5), np.float32), p)
    with pytest.raises(ops.DimensionError):
        ops.conv2d_backward(np.zeros((1, 2, 5, 5), np.float32), p, np.zeros((1, 4, 4, 4), np.float32))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        ops.ConvSpec(1, 1, (4, 4))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_linearity_without_bias(a, b, seed):
    rng = np.random.default_rng(seed)
    p = random_layer(rng, 2, 3, 3)
    p.bias[:] = 0
    x = rng.standard_normal((1, 2, 6, 7))
    y = rng.standard_normal((1, 2, 6, 7))
    lhs = ops.conv2d_forward(a * x + b * y, p)
    rhs = a * ops.conv2d_forward(x, p) + b * ops.conv2d_forward(y, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# conv2d backward


def test_backward_zero_grad():
    rng = np.random.default_rng(2)
    p = random_layer(rng, 2, 3, 3)
    x = rng.standard_normal((2, 2, 5, 5))
    gx, gw, gb = ops.conv2d_backward(x, p, np.zeros((2, 3, 5, 5)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_backward_identity_kernel():
    rng = np.random.default_rng(3)
    p = ops.LayerParams(np.ones((1, 1, 1, 1)), np.zeros(1), ops.ConvSpec(1, 1, (1, 1)))
    x = rng.standard_normal((1, 1, 4, 4))
    g = rng.standard_normal((1, 1, 4, 4))
    gx, _, _ = ops.conv2d_backward(x, p, g)
    np.testing.assert_array_equal(gx, g)


@pytest.mark.parametrize("k,d", [(3, 1), (5, 2), (3, 2), (1, 1)])
def test_backward_finite_differences(k, d):
    rng = np.random.default_rng(10 + k + d)
    p = random_layer(rng, 2, 3, k, dilation=d)
    x = rng.standard_normal((2, 2, 7, 6))

    def loss():
        return 0.5 * np.sum(ops.conv2d_forward(x, p) ** 2)

    out = ops.conv2d_forward(x, p)
    gx, gw, gb = ops.conv2d_backward(x, p, out)
    for arr, grad in ((x, gx), (p.weights, gw), (p.bias, gb)):
        for _ in range(10):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            assert rel_error(grad[idx], central_difference(loss, arr, idx)) <= 1e-3


def test_backward_linear_in_grad_out():
    rng = np.random.default_rng(4)
    p = random_layer(rng, 2, 2, 3)
    x = rng.standard_normal((1, 2, 5, 5))
    g1, g2 = rng.standard_normal((2, 1, 2, 5, 5))
    a = ops.conv2d_backward(x, p, 2 * g1 + g2)
    b1 = ops.conv2d_backward(x, p, g1)
    b2 = ops.conv2d_backward(x, p, g2)
    for u, v, w in zip(a, b1, b2):
        np.testing.assert_allclose(u, 2 * v + w, atol=1e-10)


# transposed convolution


def test_deconv_shape_contract():
    p = ops.bicubic_deconv_init(3)
    y = ops.deconv2d_forward(np.zeros((1, 64, 18, 18), np.float32), p, 3)
    assert y.shape == (1, 1, 54, 54)


@pytest.mark.parametrize("stride", [2, 3, 4])
@pytest.mark.parametrize("h,w", [(1, 1), (5, 7), (18, 18)])
def test_deconv_output_shape(stride, h, w):
    p = ops.bicubic_deconv_init(stride, in_channels=2)
    assert ops.deconv2d_forward(np.ones((1, 2, h, w)), p, stride).shape == (1, 1, stride * h, stride * w)


def test_deconv_unsupported_stride():
    with pytest.raises(ValueError):
        ops.deconv_geometry(5)
    with pytest.raises(ValueError):
        ops.bicubic_deconv_init(1)
    p = ops.bicubic_deconv_init(2, in_channels=1)
    with pytest.raises(ops.DimensionError):
        ops.deconv2d_forward(np.ones((1, 1, 4, 4)), p, 3)


@pytest.mark.parametrize("stride", [2, 3, 4])
def test_deconv_matches_zero_stuffing(stride):
    rng = np.random.default_rng(stride)
    p = random_deconv(rng, 3, 2, stride)
    x = rng.standard_normal((2, 3, 5, 4))
    ref = zero_stuff_deconv(x, p.weights, p.bias, stride, p.spec.padding[0])
    assert np.max(np.abs(ops.deconv2d_forward(x, p, stride) - ref)) <= 1e-5


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_bicubic_deconv_reproduces_bicubic(scale):
    rng = np.random.default_rng(20 + scale)
    plane = rng.random((12, 10))
    p = ops.bicubic_deconv_init(scale, in_channels=1, dtype=np.float64)
    y = ops.deconv2d_forward(plane[None, None], p, scale)[0, 0]
    ref = naive_bicubic(plane, 12 * scale, 10 * scale)
    m = 2 * scale
    assert np.max(np.abs(y - ref)[m:-m, m:-m]) <= 1e-3
    np.testing.assert_allclose(ref, bicubic_resize(plane, 10 * scale, 12 * scale), atol=1e-12)


def test_deconv_backward_zero():
    rng = np.random.default_rng(5)
    p = random_deconv(rng, 2, 1, 3)
    x = rng.standard_normal((1, 2, 4, 4))
    gx, gw, gb = ops.deconv2d_backward(x, p, 3, np.zeros((1, 1, 12, 12)))
    assert not gx.any() and not gw.any() and not gb.any()


@pytest.mark.parametrize("stride", [2, 3, 4])
def test_deconv_backward_finite_differences(stride):
    rng = np.random.default_rng(30 + stride)
    p = random_deconv(rng, 2, 2, stride)
    x = rng.standard_normal((2, 2, 4, 3))

    def loss():
        return 0.5 * np.sum(ops.deconv2d_forward(x, p, stride) ** 2)

    out = ops.deconv2d_forward(x, p, stride)
    gx, gw, gb = ops.deconv2d_backward(x, p, stride, out)
    for arr, grad in ((x, gx), (p.weights, gw), (p.bias, gb)):
        for _ in range(10):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            assert rel_error(grad[idx], central_difference(loss, arr, idx)) <= 1e-3


@pytest.mark.parametrize("stride", [2, 3, 4])
def test_deconv_input_gradient_is_strided_correlation(stride):
    # adjoint: grad_x[c, i, j] = sum_{o,a,b} g_full[o, s*i + a, s*j + b] * W[o, c, a, b]
    rng = np.random.default_rng(40 + stride)
    p = random_deconv(rng, 3, 2, stride)
    h, w = 4, 5
    x = rng.standard_normal((1, 3, h, w))
    g = rng.standard_normal((1, 2, stride * h, stride * w))
    gx, _, _ = ops.deconv2d_backward(x, p, stride, g)
    k = p.spec.kernel[0]
    off = p.spec.padding[0]
    full = np.zeros((1, 2, stride * (h - 1) + k, stride * (w - 1) + k))
    full[:, :, off : off + stride * h, off : off + stride * w] = g
    ref = np.zeros_like(x)
    for c in range(3):
        for i in range(h):
            for j in range(w):
                window = full[0, :, stride * i : stride * i + k, stride * j : stride * j + k]
                ref[0, c, i, j] = np.sum(window * p.weights[:, c])
    np.testing.assert_allclose(gx, ref, atol=1e-10)
    # and <deconv(x), g> == <x, grad_x> with zero bias
    p.bias[:] = 0
    np.testing.assert_allclose(np.sum(ops.deconv2d_forward(x, p, stride) * g), np.sum(x * gx), rtol=1e-10)


# activations and initialisation


def test_leaky_relu_values():
    assert ops.leaky_relu(np.array([0.0]))[0] == 0.0
    assert ops.leaky_relu(np.array([-1.0]), 0.2)[0] == pytest.approx(-0.2)
    assert ops.leaky_relu(np.array([3.0]))[0] == 3.0
    with pytest.raises(ValueError):
        ops.leaky_relu(np.array([1.0]), 1.5)


def test_leaky_relu_composition():
    x = np.random.default_rng(6).standard_normal(1000)
    twice = ops.leaky_relu(ops.leaky_relu(x, 0.2), 0.2)
    np.testing.assert_allclose(twice, np.where(x >= 0, x, 0.04 * x))
    assert np.any(twice[x < 0] != ops.leaky_relu(x, 0.2)[x < 0])


def test_leaky_relu_backward():
    x = np.array([-2.0, 0.0, 1.5])
    np.testing.assert_allclose(ops.leaky_relu_backward(x, np.ones(3), 0.2), [0.2, 1.0, 1.0])


def test_xavier_determinism_and_bias():
    spec = ops.ConvSpec(64, 64, (3, 3))
    a, b = ops.xavier_init(spec, 7), ops.xavier_init(spec, 7)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not a.bias.any()
    assert a.weights.dtype == np.float32


def test_xavier_variance():
    spec = ops.ConvSpec(64, 64, (3, 3))
    w = np.concatenate([ops.xavier_init(spec, s).weights.ravel() for s in range(3)])[:100_000]
    fan = 64 * 9
    expected = 2.0 / (fan + fan)
    assert abs(w.var() / expected - 1) < 0.05
    assert np.abs(w).max() <= np.sqrt(6 / (2 * fan))


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_bicubic_taps_partition_of_unity(scale):
    taps = ops.bicubic_taps(scale)
    for phase in range(scale):
        assert taps[phase::scale].sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_bicubic_init_constant_input(scale):
    p = ops.bicubic_deconv_init(scale, in_channels=64, dtype=np.float64)
    y = ops.deconv2d_forward(np.ones((1, 64, 10, 10)), p, scale)[0, 0]
    m = 2 * scale
    np.testing.assert_allclose(y[m:-m, m:-m], 1.0, atol=1e-12)


def test_bicubic_init_ramp():
    scale = 3
    p = ops.bicubic_deconv_init(scale, in_channels=1, dtype=np.float64)
    ramp = np.tile(np.arange(12, dtype=np.float64), (12, 1)) / 12
    y = ops.deconv2d_forward(ramp[None, None], p, scale)[0, 0]
    # hi-res column o sits at low-res coordinate (o + 0.5) / 3 - 0.5
    analytic = ((np.arange(36) + 0.5) / 3 - 0.5) / 12
    m = 2 * scale
    assert np.max(np.abs(y - analytic[None, :])[m:-m, m:-m]) <= 1e-3
