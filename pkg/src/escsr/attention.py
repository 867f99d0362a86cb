"""Non-overlapping window self-attention with relative position bias.

Two interchangeable backends:

* ``naive`` materialises the full (P, P) score matrix per head and window.
* ``tiled`` streams keys/values in blocks with a running max and running
  normaliser (online softmax); bias entries are gathered per block from the
  (2ws-1)^2 table and no P x P array is ever built.

Both report an :class:`AttentionWorkspace` with the scratch they allocate.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .kernels import tiled_attention
from .tensor_ops import ConvKernel, conv2d, layer_norm_channels

BACKENDS = ("naive", "tiled")


@dataclass
class WindowSet:
    windows: np.ndarray  # (n * num_windows, c, ws, ws)
    origin: tuple        # (n, c, H, W)
    ws: int

    @property
    def num_windows(self):
        return self.windows.shape[0]


@dataclass
class AttentionWorkspace:
    """Scratch accounting for one attention call.

    ``aux_floats_peak`` is the largest number of scratch reals live at once
    while processing a single window; ``aux_index_peak`` counts integer
    index scratch separately. ``blocks_processed`` counts key/value blocks
    summed over windows and heads.
    """

    aux_floats_peak: int = 0
    aux_index_peak: int = 0
    blocks_processed: int = 0

    def record(self, floats, index=0, blocks=0):
        self.aux_floats_peak = max(self.aux_floats_peak, int(floats))
        self.aux_index_peak = max(self.aux_index_peak, int(index))
        self.blocks_processed += int(blocks)

    def merge(self, other):
        self.record(other.aux_floats_peak, other.aux_index_peak, other.blocks_processed)


def window_partition(x: np.ndarray, ws: int) -> WindowSet:
    if x.ndim != 4:
        raise ShapeError("expected (n, c, h, w)", axis="rank")
    n, c, h, w = x.shape
    if ws < 1:
        raise ValueError("window size must be positive")
    if h % ws:
        raise ShapeError(f"height {h} is not a multiple of window size {ws}; pad with pad_reflect first",
                         axis="height")
    if w % ws:
        raise ShapeError(f"width {w} is not a multiple of window size {ws}; pad with pad_reflect first",
                         axis="width")
    win = (x.reshape(n, c, h // ws, ws, w // ws, ws)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(-1, c, ws, ws))
    return WindowSet(win, (n, c, h, w), ws)


def window_merge(ws_set: WindowSet) -> np.ndarray:
    n, c, h, w = ws_set.origin
    ws = ws_set.ws
    return (ws_set.windows.reshape(n, h // ws, w // ws, c, ws, ws)
            .transpose(0, 3, 1, 4, 2, 5)
            .reshape(n, c, h, w))


def split_heads(windows: np.ndarray, heads: int) -> np.ndarray:
    """(nw, c, ws, ws) -> (nw, heads, P, c // heads); channel = head * d + k."""
    nw, c, ws, _ = windows.shape
    if c % heads:
        raise ShapeError(f"{c} channels not divisible by {heads} heads", axis="channel")
    d = c // heads
    return windows.reshape(nw, heads, d, ws * ws).transpose(0, 1, 3, 2)


def merge_heads(t: np.ndarray, ws: int) -> np.ndarray:
    nw, heads, P, d = t.shape
    return t.transpose(0, 1, 3, 2).reshape(nw, heads * d, ws, ws)


def token_coords(ws):
    p = np.arange(ws * ws, dtype=np.int64)
    return p // ws, p % ws


def relative_index(ws: int) -> np.ndarray:
    """(P, P) flat indices into a (2ws-1)^2 table, offset (dy + ws - 1, dx + ws - 1)."""
    ys, xs = token_coords(ws)
    span = 2 * ws - 1
    return (ys[:, None] - ys[None, :] + ws - 1) * span + (xs[:, None] - xs[None, :] + ws - 1)


def _check_qkv(q, k, v, table, ws):
    if q.shape != k.shape or q.shape != v.shape or q.ndim != 4:
        raise ShapeError("q, k, v must share shape (windows, heads, P, d)", axis="rank")
    nw, nh, P, d = q.shape
    if d == 0:
        raise ShapeError("head dimension is zero", axis="channel")
    if P != ws * ws:
        raise ShapeError(f"token count {P} != ws^2 = {ws * ws}", axis="token")
    if table.shape != (nh, (2 * ws - 1) ** 2):
        raise ShapeError(f"bias table shape {table.shape} != ({nh}, {(2 * ws - 1) ** 2})", axis="head")


def attention_probs(q, k, table, ws):
    """Full softmax(q kᵀ/√d + bias) for every window/head: (nw, nh, P, P)."""
    d = q.shape[-1]
    s = np.matmul(q, k.swapaxes(-1, -2)) * q.dtype.type(1.0 / np.sqrt(d))
    s += table.astype(q.dtype, copy=False)[:, relative_index(ws)]
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def attention_naive(q, k, v, table, ws, attn_sum=None):
    """Reference attention. ``attn_sum``, if given, accumulates probabilities
    summed over windows and heads (a (P, P) float64 array)."""
    _check_qkv(q, k, v, table, ws)
    nw, nh, P, d = q.shape
    out = np.empty_like(q)
    for w in range(nw):
        p = attention_probs(q[w:w + 1], k[w:w + 1], table, ws)
        if attn_sum is not None:
            attn_sum += p[0].sum(axis=0)
        out[w] = np.matmul(p[0], v[w])
    wsp = AttentionWorkspace()
    # scores + gathered bias per head, row max and row sum; plus the index map
    wsp.record(2 * nh * P * P + 2 * nh * P, P * P, nw * nh)
    return out, wsp


def attention_tiled(q, k, v, table, ws, block=64):
    _check_qkv(q, k, v, table, ws)
    if block < 1:
        raise ValueError("block size must be >= 1")
    nw, nh, P, d = q.shape
    ys, xs = token_coords(ws)
    scale = 1.0 / np.sqrt(d)
    out, aux, aux_idx = tiled_attention(q, k, v, table, ys, xs, ws, block, scale)
    wsp = AttentionWorkspace()
    wsp.record(aux, aux_idx, nw * nh * -(-P // min(block, P)))
    return out, wsp


@dataclass
class AttnParams:
    norm_weight: np.ndarray
    norm_bias: np.ndarray
    relpos: np.ndarray  # (heads, (2ws-1)^2)
    proj: ConvKernel


def self_attention_layer(x, params: AttnParams, cfg, workspace=None, attn_sum=None):
    """LN -> windowed attention with Q = K = V -> 1x1 projection. No shift.

    ``cfg`` needs ``heads``, ``ws``, ``backend`` and ``block``. Spatial dims
    of ``x`` must already be window multiples.
    """
    n, c, h, w = x.shape
    y = layer_norm_channels(x, params.norm_weight, params.norm_bias)
    win = window_partition(y, cfg.ws)
    qkv = np.ascontiguousarray(split_heads(win.windows, cfg.heads))
    if cfg.backend == "naive":
        o, wsp = attention_naive(qkv, qkv, qkv, params.relpos, cfg.ws, attn_sum=attn_sum)
    elif cfg.backend == "tiled":
        o, wsp = attention_tiled(qkv, qkv, qkv, params.relpos, cfg.ws, cfg.block)
    else:
        raise ValueError(f"unknown attention backend {cfg.backend!r}")
    if workspace is not None:
        workspace.merge(wsp)
    merged = window_merge(WindowSet(merge_heads(o, cfg.ws), win.origin, cfg.ws))
    return conv2d(merged, params.proj)
