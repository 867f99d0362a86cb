"""Convolutional attention: a shared large kernel plus a per-input 3x3
depthwise kernel applied to the first ``slice`` channels, fused by 1x1 conv.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .kernels import depthwise_correlate
from .tensor_ops import ConvKernel, conv2d, gelu, global_avg_pool

SLICE = 16
DK_SIZE = 3


@dataclass
class ConvAttnParams:
    est_down: ConvKernel  # 1x1, slice -> h
    est_up: ConvKernel    # 1x1, h -> 9 * slice
    fuse: ConvKernel      # 1x1, C -> C
    slice: int = SLICE

    def __post_init__(self):
        if self.est_up.c_out != DK_SIZE * DK_SIZE * self.slice:
            raise ShapeError(f"kernel estimator must emit {DK_SIZE * DK_SIZE * self.slice} values, "
                             f"got {self.est_up.c_out}", axis="c_out")
        if self.fuse.c_out < self.slice:
            raise ShapeError("fuse width smaller than the attention slice", axis="channel")

    @property
    def hidden(self):
        return self.est_down.c_out


class SharedLargeKernel:
    """The one large kernel every ConvAttn layer reads.

    Either ``composed`` (dense (slice, slice, k, k)) or the pair
    ``pointwise`` (slice, slice, 1, 1) + ``depthwise`` (slice, 1, k, k).
    Layers hold a reference to the same instance, so mutating its arrays
    changes every layer.
    """

    def __init__(self, composed: Optional[np.ndarray] = None, pointwise: Optional[np.ndarray] = None,
                 depthwise: Optional[np.ndarray] = None):
        has_dec = pointwise is not None or depthwise is not None
        if (composed is None) == (not has_dec):
            raise ValueError("populate exactly one of composed or (pointwise, depthwise)")
        if has_dec and (pointwise is None or depthwise is None):
            raise ValueError("decomposed mode needs both pointwise and depthwise parts")
        if composed is not None:
            c, c2, kh, kw = composed.shape
            if c != c2 or kh != kw or kh % 2 == 0:
                raise ShapeError(f"composed kernel must be (s, s, k, k) with odd k, got {composed.shape}",
                                 axis="kernel")
        else:
            c = pointwise.shape[0]
            if pointwise.shape != (c, c, 1, 1) or depthwise.shape[:2] != (c, 1) \
                    or depthwise.shape[2] != depthwise.shape[3] or depthwise.shape[2] % 2 == 0:
                raise ShapeError("decomposed kernel must be pointwise (s, s, 1, 1) and depthwise (s, 1, k, k)",
                                 axis="kernel")
        self.composed = composed
        self.pointwise = pointwise
        self.depthwise = depthwise

    @property
    def mode(self):
        return "composed" if self.composed is not None else "decomposed"

    @property
    def size(self):
        return (self.composed if self.composed is not None else self.depthwise).shape[-1]

    @property
    def channels(self):
        return (self.composed if self.composed is not None else self.pointwise).shape[0]

    def dense(self) -> np.ndarray:
        """Equivalent dense kernel; for decomposed mode K[o, i] = dw[o] * pw[o, i]."""
        if self.composed is not None:
            return self.composed
        return self.depthwise * self.pointwise[:, :, 0, 0][:, :, None, None]


def estimate_dynamic_kernel(f_att: np.ndarray, p: ConvAttnParams) -> np.ndarray:
    """Per-item 3x3 depthwise kernels, shape (n, slice, 1, 3, 3).

    The estimator output vector is read in (ky, kx, 1, channel) row-major
    order, i.e. entry (ky * 3 + kx) * slice + c is tap (ky, kx) of channel c.
    """
    if f_att.ndim != 4 or f_att.shape[1] != p.slice:
        raise ShapeError(f"dynamic kernel estimator expects {p.slice} channels, got "
                         f"{f_att.shape[1] if f_att.ndim == 4 else f_att.shape}", axis="channel")
    z = conv2d(global_avg_pool(f_att), p.est_down)
    z = conv2d(gelu(z), p.est_up)
    n = f_att.shape[0]
    dk = z.reshape(n, DK_SIZE, DK_SIZE, 1, p.slice)
    return np.ascontiguousarray(dk.transpose(0, 4, 3, 1, 2))


def zero_pad_kernel(dk: np.ndarray, size: int) -> np.ndarray:
    """Centre a (..., 3, 3) kernel inside a (..., size, size) block of zeros."""
    k = dk.shape[-1]
    off = (size - k) // 2
    out = np.zeros(dk.shape[:-2] + (size, size), dtype=dk.dtype)
    out[..., off:off + k, off:off + k] = dk
    return out


def _split(f_cf, p):
    if f_cf.ndim != 4:
        raise ShapeError("expected (n, c, h, w)", axis="rank")
    if f_cf.shape[1] < p.slice:
        raise ShapeError(f"ConvAttn needs at least {p.slice} channels, got {f_cf.shape[1]}", axis="channel")
    if p.fuse.weight.shape[1] != f_cf.shape[1]:
        raise ShapeError(f"fuse expects {p.fuse.weight.shape[1]} channels, got {f_cf.shape[1]}",
                         axis="channel")
    return f_cf[:, :p.slice], f_cf[:, p.slice:]


def _fuse(f_res, f_idt, p):
    return conv2d(np.concatenate([f_res, f_idt], axis=1), p.fuse)


def _dk_branch(f_att, dk):
    n, c, h, w = f_att.shape
    pad = DK_SIZE // 2
    xp = np.pad(f_att, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return depthwise_correlate(xp, dk[:, :, 0], (h, w))


def conv_attn_forward(f_cf: np.ndarray, lk: SharedLargeKernel, p: ConvAttnParams) -> np.ndarray:
    """Two-convolution form: (F_att * DK) + (F_att * LK), then fuse."""
    if lk.mode != "composed":
        raise ValueError("conv_attn_forward needs a composed large kernel; use conv_attn_decomposed")
    f_att, f_idt = _split(f_cf, p)
    dk = estimate_dynamic_kernel(f_att, p)
    f_res = _dk_branch(f_att, dk)
    f_res += conv2d(f_att, ConvKernel(lk.composed), padding=lk.size // 2)
    return _fuse(f_res, f_idt, p)


def conv_attn_decomposed(f_cf: np.ndarray, lk: SharedLargeKernel, p: ConvAttnParams) -> np.ndarray:
    """(F_att * LK_pointwise) * (ZP(DK) + LK_depthwise), then fuse."""
    if lk.mode != "decomposed":
        raise ValueError("conv_attn_decomposed needs a decomposed large kernel")
    f_att, f_idt = _split(f_cf, p)
    dk = estimate_dynamic_kernel(f_att, p)
    size = lk.size
    kern = zero_pad_kernel(dk[:, :, 0], size) + lk.depthwise[None, :, 0].astype(dk.dtype)
    mixed = conv2d(f_att, ConvKernel(lk.pointwise))
    pad = size // 2
    xp = np.pad(mixed, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    f_res = depthwise_correlate(xp, kern, mixed.shape[2:])
    return _fuse(f_res, f_idt, p)


def conv_attn(f_cf, lk: SharedLargeKernel, p: ConvAttnParams) -> np.ndarray:
    if lk.mode == "composed":
        return conv_attn_forward(f_cf, lk, p)
    return conv_attn_decomposed(f_cf, lk, p)


def merge_dk_into_lk(dk: ConvKernel, lk: ConvKernel) -> ConvKernel:
    """Fold a depthwise 3x3 kernel into the centre of the channel diagonal of LK."""
    s, _, k, _ = lk.weight.shape
    if dk.weight.shape != (s, 1, DK_SIZE, DK_SIZE):
        raise ShapeError(f"dynamic kernel shape {dk.weight.shape} incompatible with LK {lk.weight.shape}",
                         axis="kernel")
    merged = lk.weight.astype(np.result_type(lk.weight, dk.weight), copy=True)
    off = (k - DK_SIZE) // 2
    ch = np.arange(s)
    merged[ch, ch, off:off + DK_SIZE, off:off + DK_SIZE] += dk.weight[:, 0]
    return ConvKernel(merged)


def conv_attn_merged(f_cf: np.ndarray, lk: SharedLargeKernel, p: ConvAttnParams) -> np.ndarray:
    """Single-convolution form with DK folded into LK. Slower; kept for checking."""
    if lk.mode != "composed":
        raise ValueError("merging needs a composed large kernel")
    f_att, f_idt = _split(f_cf, p)
    dk = estimate_dynamic_kernel(f_att, p)
    pad = lk.size // 2
    res = [conv2d(f_att[i:i + 1], merge_dk_into_lk(ConvKernel(dk[i], groups=p.slice), ConvKernel(lk.composed)),
                  padding=pad) for i in range(f_att.shape[0])]
    return _fuse(np.concatenate(res, axis=0), f_idt, p)
