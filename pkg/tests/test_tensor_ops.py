import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from escsr.errors import ShapeError
from escsr.tensor_ops import (ConvKernel, bicubic_resize, conv2d, crop, gelu, global_avg_pool, layer_norm_channels,
                              pad_reflect, pixel_shuffle, repeat_skip)


def loop_correlate(x, w, pad):
    """Scalar cross-correlation of a single (h, w) plane with zero padding."""
    kh, kw = w.shape
    h, wd = x.shape
    out = np.zeros((h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    y, z = i + a - pad, j + b - pad
                    if 0 <= y < h and 0 <= z < wd:
                        acc += w[a, b] * x[y, z]
            out[i, j] = acc
    return out


# ---- conv2d ---------------------------------------------------------------

def test_conv_identity_1x1(rng):
    x = rng.standard_normal((2, 5, 4, 6)).astype(np.float32)
    k = ConvKernel(np.eye(5, dtype=np.float32)[:, :, None, None], np.zeros(5, np.float32))
    np.testing.assert_array_equal(conv2d(x, k), x)


def test_conv_all_ones_sum():
    x = np.ones((1, 1, 3, 3), np.float32)
    out = conv2d(x, ConvKernel(np.ones((1, 1, 3, 3), np.float32)))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_conv_zero_kernel(rng):
    x = rng.standard_normal((1, 3, 7, 5)).astype(np.float32)
    out = conv2d(x, ConvKernel(np.zeros((4, 3, 3, 3), np.float32), np.zeros(4, np.float32)), padding=1)
    assert out.shape == (1, 4, 7, 5)
    assert not out.any()


def test_conv_matches_loop_oracle_dense(rng):
    x = rng.standard_normal((1, 2, 6, 7))
    w = rng.standard_normal((3, 2, 3, 5))
    out = conv2d(x, ConvKernel(w), padding=(1, 1, 2, 2))
    for o in range(3):
        ref = sum(_asym(x[0, i], w[o, i], (1, 1, 2, 2)) for i in range(2))
        np.testing.assert_allclose(out[0, o], ref, atol=1e-10)


def _asym(plane, w, pads):
    t, b, l, r = pads
    padded = np.pad(plane, ((t, b), (l, r)))
    return loop_correlate(padded, w, 0)


def test_conv_output_size_and_stride(rng):
    x = rng.standard_normal((1, 1, 9, 8)).astype(np.float32)
    out = conv2d(x, ConvKernel(np.ones((1, 1, 3, 3), np.float32)), padding=1, stride=2)
    assert out.shape == (1, 1, (9 + 2 - 3) // 2 + 1, (8 + 2 - 3) // 2 + 1)
    full = conv2d(x, ConvKernel(np.ones((1, 1, 3, 3), np.float32)), padding=1)
    np.testing.assert_allclose(out, full[:, :, ::2, ::2], rtol=1e-6)


def test_depthwise_matches_loop_oracle(rng, flavour):
    x = rng.standard_normal((2, 4, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 1, 3, 3)).astype(np.float32)
    out = conv2d(x, ConvKernel(w, groups=4), padding=1)
    for n in range(2):
        for c in range(4):
            ref = loop_correlate(x[n, c].astype(np.float64), w[c, 0].astype(np.float64), 1)
            assert np.abs(out[n, c] - ref).max() <= 1e-5


def test_grouped_conv_matches_per_group(rng):
    x = rng.standard_normal((1, 6, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    out = conv2d(x, ConvKernel(w, groups=2), padding=1)
    a = conv2d(x[:, :3], ConvKernel(w[:2]), padding=1)
    b = conv2d(x[:, 3:], ConvKernel(w[2:]), padding=1)
    np.testing.assert_allclose(out, np.concatenate([a, b], 1), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-10, 10), beta=st.floats(-10, 10), seed=st.integers(0, 2 ** 16))
def test_conv_linearity(alpha, beta, seed):
    r = np.random.default_rng(seed)
    x, y = (r.standard_normal((1, 3, 6, 6)).astype(np.float32) for _ in range(2))
    k = ConvKernel(r.standard_normal((2, 3, 3, 3)).astype(np.float32))
    lhs = conv2d(np.float32(alpha) * x + np.float32(beta) * y, k, padding=1)
    rhs = np.float32(alpha) * conv2d(x, k, padding=1) + np.float32(beta) * conv2d(y, k, padding=1)
    assert np.abs(lhs - rhs).max() <= 1e-4


def test_conv_channel_mismatch_names_axis(rng):
    with pytest.raises(ShapeError) as err:
        conv2d(np.zeros((1, 3, 4, 4), np.float32), ConvKernel(np.zeros((2, 4, 1, 1), np.float32)))
    assert err.value.axis == "channel"


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError) as err:
        conv2d(np.zeros((1, 1, 2, 9), np.float32), ConvKernel(np.zeros((1, 1, 3, 3), np.float32)))
    assert err.value.axis == "height"


def test_conv_kernel_dims_property():
    k = ConvKernel(np.zeros((16, 1, 3, 3), np.float32), groups=16)
    assert k.dims == (3, 3, 1, 16)
    with pytest.raises(ShapeError):
        ConvKernel(np.zeros((6, 1, 3, 3)), groups=4)


def test_conv_deterministic(rng):
    x = rng.standard_normal((1, 16, 20, 20)).astype(np.float32)
    k = ConvKernel(rng.standard_normal((16, 16, 13, 13)).astype(np.float32))
    assert conv2d(x, k, padding=6).tobytes() == conv2d(x, k, padding=6).tobytes()


# ---- layer norm -----------------------------------------------------------

def test_layer_norm_constant_vector_is_zero():
    x = np.full((1, 4, 2, 2), 3.0, np.float32)
    out = layer_norm_channels(x, np.ones(4, np.float32), np.zeros(4, np.float32))
    np.testing.assert_array_equal(out, 0)


def test_layer_norm_two_channels():
    x = np.array([1.0, 3.0], np.float32).reshape(1, 2, 1, 1)
    out = layer_norm_channels(x, np.ones(2, np.float32), np.zeros(2, np.float32), eps=1e-6)
    # mean 2, variance 1 -> (-1, 1) / sqrt(1 + 1e-6)
    expect = np.array([-1.0, 1.0]) / math.sqrt(1 + 1e-6)
    np.testing.assert_allclose(out.ravel(), expect, rtol=1e-6)


def test_layer_norm_moments(rng):
    x = rng.standard_normal((2, 8, 5, 5)).astype(np.float32) * 3 + 1
    out = layer_norm_channels(x, np.ones(8, np.float32), np.zeros(8, np.float32))
    assert np.abs(out.mean(axis=1)).max() <= 1e-6
    assert np.abs(out.var(axis=1) - 1).max() <= 1e-3


def test_layer_norm_affine(rng):
    x = rng.standard_normal((1, 3, 2, 2))
    g, b = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 1.0])
    base = layer_norm_channels(x, np.ones(3), np.zeros(3))
    np.testing.assert_allclose(layer_norm_channels(x, g, b), base * g[None, :, None, None] + b[None, :, None, None])


def test_layer_norm_rejects_zero_channels():
    with pytest.raises(ShapeError):
        layer_norm_channels(np.zeros((1, 0, 2, 2)), np.zeros(0), np.zeros(0))


# ---- gelu / pooling -------------------------------------------------------

def test_gelu_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    # Phi(1) = 0.5 * (1 + erf(1 / sqrt 2))
    assert abs(gelu(np.array([1.0]))[0] - 0.5 * (1 + math.erf(1 / math.sqrt(2)))) < 1e-12
    assert abs(gelu(np.array([1.0]))[0] - 0.84134) < 1e-5
    assert abs(gelu(np.array([-10.0]))[0]) < 1e-8


def test_gelu_keeps_float32():
    assert gelu(np.ones((1, 1, 2, 2), np.float32)).dtype == np.float32


def test_global_avg_pool():
    x = np.arange(1, 5, dtype=np.float32).reshape(1, 1, 2, 2)
    out = global_avg_pool(x)
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 2.5
    assert global_avg_pool(np.full((2, 3, 4, 5), 7.0)).ravel().tolist() == [7.0] * 6
    with pytest.raises(ShapeError):
        global_avg_pool(np.zeros((1, 1, 0, 3)))


# ---- pixel shuffle / skip -------------------------------------------------

def test_pixel_shuffle_enumeration():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(pixel_shuffle(x, 2)[0, 0], [[1, 2], [3, 4]])


def test_pixel_shuffle_shape_and_identity(rng):
    x = rng.standard_normal((1, 12, 5, 7))
    assert pixel_shuffle(x, 2).shape == (1, 3, 10, 14)
    np.testing.assert_array_equal(pixel_shuffle(x, 1), x)
    with pytest.raises(ShapeError):
        pixel_shuffle(x, 3)


def test_pixel_shuffle_against_index_oracle(rng):
    r, c, h, w = 3, 2, 2, 3
    x = rng.standard_normal((1, c * r * r, h, w))
    out = pixel_shuffle(x, r)
    for ch in range(c):
        for y in range(h * r):
            for z in range(w * r):
                assert out[0, ch, y, z] == x[0, ch * r * r + (y % r) * r + z % r, y // r, z // r]


@settings(max_examples=25, deadline=None)
@given(r=st.integers(1, 4), c=st.integers(1, 3), seed=st.integers(0, 999))
def test_pixel_shuffle_preserves_multiset(r, c, seed):
    x = np.random.default_rng(seed).standard_normal((1, c * r * r, 3, 2))
    np.testing.assert_array_equal(np.sort(pixel_shuffle(x, r).ravel()), np.sort(x.ravel()))


@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_repeat_skip_is_nearest_neighbour(rng, r):
    img = rng.random((1, 3, 4, 5)).astype(np.float32)
    rep = repeat_skip(img, r)
    assert rep.shape == (1, 3 * r * r, 4, 5)
    nn = np.empty((1, 3, 4 * r, 5 * r), np.float32)
    for y in range(4 * r):
        for x in range(5 * r):
            nn[0, :, y, x] = img[0, :, y // r, x // r]
    np.testing.assert_array_equal(pixel_shuffle(rep, r), nn)


# ---- padding / crop -------------------------------------------------------

def test_reflect_row():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(pad_reflect(x, (0, 0, 1, 1)).ravel(), [2, 1, 2, 3, 2])


def test_pad_zero_is_identity(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    np.testing.assert_array_equal(pad_reflect(x, 0), x)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(2, 9), w=st.integers(2, 9), data=st.data())
def test_pad_crop_roundtrip(h, w, data):
    pads = tuple(data.draw(st.integers(0, d - 1)) for d in (h, h, w, w))
    x = np.random.default_rng(h * 31 + w).standard_normal((1, 2, h, w)).astype(np.float32)
    np.testing.assert_array_equal(crop(pad_reflect(x, pads), pads), x)


def test_pad_too_large():
    with pytest.raises(ShapeError):
        pad_reflect(np.zeros((1, 1, 3, 3)), (3, 0, 0, 0))


# ---- bicubic --------------------------------------------------------------

def cubic_conv_1d(samples, r, a=-0.5):
    """Direct evaluation of Keys' cubic convolution at half-pixel-aligned positions."""
    n = len(samples)

    def kern(t):
        t = abs(t)
        if t <= 1:
            return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
        if t < 2:
            return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
        return 0.0

    out = []
    for i in range(n * r):
        s = (i + 0.5) / r - 0.5
        acc = 0.0
        for j in range(math.floor(s) - 1, math.floor(s) + 3):
            acc += kern(s - j) * samples[min(max(j, 0), n - 1)]
        out.append(acc)
    return np.array(out)


def test_bicubic_1d_oracle():
    x = np.array([0.0, 1.0], np.float32).reshape(1, 1, 1, 2)
    out = bicubic_resize(x, 2)
    assert out.shape == (1, 1, 2, 4)
    np.testing.assert_allclose(out[0, 0, 0], cubic_conv_1d([0.0, 1.0], 2), atol=1e-5)
    np.testing.assert_allclose(out[0, 0, 1], out[0, 0, 0], atol=1e-7)


def test_bicubic_separable_oracle(rng):
    x = rng.random((1, 1, 4, 5))
    out = bicubic_resize(x, 3)
    rows = np.array([cubic_conv_1d(row, 3) for row in x[0, 0]])
    ref = np.array([cubic_conv_1d(col, 3) for col in rows.T]).T
    np.testing.assert_allclose(out[0, 0], ref, atol=1e-10)


def test_bicubic_identity_and_constant(rng):
    x = rng.random((1, 3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(bicubic_resize(x, 1), x)
    const = np.full((1, 3, 5, 6), 0.3, np.float32)
    np.testing.assert_allclose(bicubic_resize(const, 4), 0.3, atol=1e-6)
