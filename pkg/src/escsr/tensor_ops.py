"""Dense NCHW tensor primitives.

Tensors are plain numpy arrays of shape (n, c, h, w). Every op keeps the
floating dtype of its input (float32 in the network, float64 when the
attribution code asks for it), promoting weights to match.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .kernels import depthwise_correlate

Padding = Union[int, Sequence[int]]

_AXES = ("batch", "channel", "height", "width")


@dataclass
class ConvKernel:
    """Convolution weights stored as (c_out, c_in_per_group, kh, kw)."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got rank {self.weight.ndim}", axis="rank")
        c_out = self.weight.shape[0]
        if self.groups < 1 or c_out % self.groups:
            raise ShapeError(f"groups={self.groups} does not divide c_out={c_out}", axis="c_out")
        if self.bias is not None and self.bias.shape != (c_out,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({c_out},)", axis="c_out")

    @property
    def dims(self):
        """(kh, kw, c_in_per_group, c_out)"""
        c_out, cin, kh, kw = self.weight.shape
        return (kh, kw, cin, c_out)

    @property
    def c_out(self):
        return self.weight.shape[0]


def _check4(x, name="x"):
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a rank-4 (n, c, h, w) array", axis="rank")


def _float(x):
    return x if x.dtype.kind == "f" else x.astype(np.float32)


def _sides(pad: Padding):
    if np.isscalar(pad):
        p = int(pad)
        return (p, p, p, p)
    pad = tuple(int(p) for p in pad)
    if len(pad) == 2:
        return (pad[0], pad[0], pad[1], pad[1])
    if len(pad) == 4:
        return pad
    raise ValueError("padding must be an int, (ph, pw) or (top, bottom, left, right)")


def _dense(xp, w, oh, ow, stride):
    n, ci = xp.shape[:2]
    co, _, kh, kw = w.shape
    out = np.zeros((n, co, oh * ow), dtype=xp.dtype)
    # (kh, kw, co, ci) so every tap is a contiguous matrix and matmul stays on BLAS
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    for dy in range(kh):
        for dx in range(kw):
            tap = taps[dy, dx]
            if not tap.any():
                continue
            patch = xp[:, :, dy:dy + stride * (oh - 1) + 1:stride, dx:dx + stride * (ow - 1) + 1:stride]
            out += np.matmul(tap, patch.reshape(n, ci, oh * ow))
    return out.reshape(n, co, oh, ow)


def conv2d(x: np.ndarray, k: ConvKernel, padding: Padding = 0, stride: int = 1) -> np.ndarray:
    """Zero-padded cross-correlation (no kernel flip)."""
    _check4(x)
    x = _float(x)
    n, c, h, w = x.shape
    co, cin_pg, kh, kw = k.weight.shape
    if c != cin_pg * k.groups:
        raise ShapeError(
            f"input has {c} channels but kernel expects {cin_pg * k.groups} ({cin_pg} x {k.groups} groups)",
            axis="channel")
    if stride < 1:
        raise ValueError("stride must be positive")
    t, b, l, r = _sides(padding)
    oh = (h + t + b - kh) // stride + 1
    ow = (w + l + r - kw) // stride + 1
    if h + t + b < kh or oh <= 0:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {h + t + b}", axis="height")
    if w + l + r < kw or ow <= 0:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {w + l + r}", axis="width")

    wt = k.weight.astype(x.dtype, copy=False)
    xp = np.pad(x, ((0, 0), (0, 0), (t, b), (l, r))) if any((t, b, l, r)) else x

    if k.groups == 1:
        out = _dense(xp, wt, oh, ow, stride)
    elif cin_pg == 1 and co == c:
        out = depthwise_correlate(xp, wt[None, :, 0], (oh, ow), stride)
    else:
        g = k.groups
        co_g = co // g
        out = np.concatenate(
            [_dense(xp[:, i * cin_pg:(i + 1) * cin_pg], wt[i * co_g:(i + 1) * co_g], oh, ow, stride)
             for i in range(g)], axis=1)
    if k.bias is not None:
        out += k.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return out


def layer_norm_channels(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    _check4(x)
    x = _float(x)
    c = x.shape[1]
    if c == 0:
        raise ShapeError("layer norm over zero channels", axis="channel")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)", axis="channel")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=1, keepdims=True)
    y = xc / np.sqrt(var + x.dtype.type(eps))
    return y * gamma.astype(x.dtype, copy=False)[None, :, None, None] + beta.astype(x.dtype, copy=False)[None, :, None, None]


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x)."""
    x = _float(np.asarray(x))
    half = x.dtype.type(0.5)
    return half * x * (1 + erf(x / x.dtype.type(np.sqrt(2.0))))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    _check4(x)
    if x.shape[2] * x.shape[3] == 0:
        raise ShapeError("global average pool over an empty spatial extent", axis="height")
    return _float(x).mean(axis=(2, 3), keepdims=True)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """(n, c*r*r, h, w) -> (n, c, h*r, w*r); channel c*r*r + i*r + j lands at offset (i, j)."""
    _check4(x)
    if r < 1:
        raise ValueError("scale must be positive")
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"{c} channels not divisible by r^2={r * r}", axis="channel")
    co = c // (r * r)
    return (x.reshape(n, co, r, r, h, w)
             .transpose(0, 1, 4, 2, 5, 3)
             .reshape(n, co, h * r, w * r))


def pad_reflect(x: np.ndarray, pads: Padding) -> np.ndarray:
    """Mirror padding without repeating the edge sample: (1,2,3) -> (2,1,2,3,2)."""
    _check4(x)
    t, b, l, r = _sides(pads)
    h, w = x.shape[2:]
    if min(t, b, l, r) < 0:
        raise ValueError("pad sizes must be nonnegative")
    if max(t, b) >= max(h, 1) or (h == 1 and max(t, b) > 0):
        raise ShapeError(f"reflect pad ({t}, {b}) too large for height {h}", axis="height")
    if max(l, r) >= max(w, 1) or (w == 1 and max(l, r) > 0):
        raise ShapeError(f"reflect pad ({l}, {r}) too large for width {w}", axis="width")
    if not any((t, b, l, r)):
        return x
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)), mode="reflect")


def crop(x: np.ndarray, sides: Padding) -> np.ndarray:
    _check4(x)
    t, b, l, r = _sides(sides)
    h, w = x.shape[2:]
    if t + b > h or l + r > w:
        raise ShapeError("crop larger than the tensor", axis="height" if t + b > h else "width")
    return x[:, :, t:h - b, l:w - r]


def _cubic(t, a=-0.5):
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
                    np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0))


def _bicubic_matrix(n_in, r):
    # half-pixel centres: src = (dst + 0.5) / r - 0.5
    dst = np.arange(n_in * r)
    src = (dst + 0.5) / r - 0.5
    base = np.floor(src).astype(int)
    m = np.zeros((n_in * r, n_in))
    for off in range(-1, 3):
        idx = base + off
        wts = _cubic(src - idx)
        np.add.at(m, (dst, np.clip(idx, 0, n_in - 1)), wts)
    return m


def bicubic_resize(x: np.ndarray, r: int) -> np.ndarray:
    """Separable bicubic upsampling by an integer factor (a = -0.5, edge clamp)."""
    _check4(x)
    if r < 1:
        raise ValueError("scale must be positive")
    x = _float(x)
    if r == 1:
        return x.copy()
    h, w = x.shape[2:]
    mh = _bicubic_matrix(h, r).astype(x.dtype)
    mw = _bicubic_matrix(w, r).astype(x.dtype)
    return np.matmul(np.matmul(mh, x), mw.T)


def repeat_skip(img: np.ndarray, r: int) -> np.ndarray:
    """Repeat each channel r*r times so that pixel_shuffle gives nearest-neighbour upsampling."""
    _check4(img, "img")
    if img.shape[1] != 3:
        raise ShapeError(f"repeat skip expects 3 channels, got {img.shape[1]}", axis="channel")
    return np.repeat(img, r * r, axis=1)
