"""ESC network: configuration presets, weight naming, forward pass and
analytic parameter / multiply-accumulate counters.
"""
from dataclasses import dataclass, field, replace
from math import prod
from typing import Dict, List, Optional, Tuple

import numpy as np

from .attention import AttentionWorkspace, AttnParams, BACKENDS, self_attention_layer
from .convattn import DK_SIZE, SLICE, ConvAttnParams, SharedLargeKernel, conv_attn
from .errors import ConfigError, ExtraTensorError, MissingTensorError, ShapeError, TensorShapeMismatchError
from .tensor_ops import (ConvKernel, bicubic_resize, conv2d, crop, gelu, layer_norm_channels, pad_reflect,
                         pixel_shuffle, repeat_skip)

WeightStore = Dict[str, np.ndarray]

VARIANTS = {
    # C, N, M, estimator hidden width
    "esc": (64, 5, 5, 8),
    "esc-light": (64, 3, 5, 8),
    "esc-fp": (48, 5, 5, 4),
}

# Reference parameter counts in thousands, by variant and scale.
PARAM_TARGETS_K = {
    ("esc", 2): 947, ("esc", 3): 955, ("esc", 4): 968,
    ("esc-light", 2): 603, ("esc-light", 3): 612, ("esc-light", 4): 624,
    ("esc-fp", 2): 524, ("esc-fp", 3): 530, ("esc-fp", 4): 539,
}
# Reference multiply-accumulate counts in G for a 1280x720 output.
FLOP_TARGETS_G = {
    ("esc", 2): 592.0, ("esc", 3): 267.6, ("esc", 4): 149.2,
    ("esc-light", 2): 359.4, ("esc-light", 3): 162.8, ("esc-light", 4): 91.0,
    ("esc-fp", 2): 239.8, ("esc-fp", 3): 110.0, ("esc-fp", 4): 60.8,
}

# Chosen so count_params lands within a few percent of every reference
# variant (see README, "Calibration").
DEFAULT_HEADS = 4
DEFAULT_FFN_EXPAND = 1.5


@dataclass
class ModelConfig:
    variant: str = "esc"
    C: int = 64
    N: int = 5
    M: int = 5
    ws: int = 32
    r: int = 2
    h: int = 8
    heads: int = DEFAULT_HEADS
    ffn_expand: float = DEFAULT_FFN_EXPAND
    lk_size: int = 13
    decomposed_lk: bool = False
    extra_ln: bool = False
    shared_lk: bool = True
    backend: str = "tiled"
    block: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.variant == "esc-fp" and not (self.decomposed_lk and self.extra_ln):
            raise ConfigError("esc-fp uses a decomposed large kernel and extra layer norms")
        if self.C < SLICE:
            raise ConfigError(f"C must be >= {SLICE}")
        if self.C % self.heads:
            raise ConfigError(f"C={self.C} not divisible by heads={self.heads}")
        if self.r < 1 or self.N < 0 or self.M < 0 or self.ws < 1 or self.h < 1:
            raise ConfigError("r, ws and h must be positive; N and M nonnegative")
        if self.lk_size < DK_SIZE or self.lk_size % 2 == 0:
            raise ConfigError("lk_size must be odd and >= 3")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.block < 1:
            raise ConfigError("block must be >= 1")
        if self.ffn_hidden < 1:
            raise ConfigError("ffn_expand too small")

    @classmethod
    def preset(cls, variant: str, scale: int = 2, **overrides) -> "ModelConfig":
        variant = variant.lower().replace("_", "-")
        if variant == "esc-lt":
            variant = "esc-light"
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        C, N, M, h = VARIANTS[variant]
        fp = variant == "esc-fp"
        kw = dict(variant=variant, C=C, N=N, M=M, h=h, r=scale, decomposed_lk=fp, extra_ln=fp)
        kw.update(overrides)
        return cls(**kw)

    @property
    def ffn_hidden(self) -> int:
        return int(round(self.C * self.ffn_expand))

    @property
    def skip(self) -> str:
        return "bicubic" if self.variant == "esc-fp" else "repeat"

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# parameter enumeration
# --------------------------------------------------------------------------

@dataclass
class ParamSpec:
    shape: Tuple[int, ...]
    kind: str      # conv_weight, conv_bias, norm_weight, norm_bias, table
    fan_in: int


def _conv(out, name, cin, cout, k, groups=1, bias=True):
    fan = (cin // groups) * k * k
    out[f"{name}.weight"] = ParamSpec((cout, cin // groups, k, k), "conv_weight", fan)
    if bias:
        out[f"{name}.bias"] = ParamSpec((cout,), "conv_bias", fan)


def _norm(out, name, c):
    out[f"{name}.weight"] = ParamSpec((c,), "norm_weight", c)
    out[f"{name}.bias"] = ParamSpec((c,), "norm_bias", c)


def _ffn(out, name, c, hidden):
    _conv(out, f"{name}.pw1", c, hidden, 1)
    _conv(out, f"{name}.dw", hidden, hidden, 3, groups=hidden)
    _conv(out, f"{name}.pw2", hidden, c, 1)


def _lk(out, name, cfg):
    k = cfg.lk_size
    if cfg.decomposed_lk:
        _conv(out, f"{name}.pw", SLICE, SLICE, 1, bias=False)
        _conv(out, f"{name}.dw", SLICE, SLICE, k, groups=SLICE, bias=False)
    else:
        _conv(out, name, SLICE, SLICE, k, bias=False)


def param_specs(cfg: ModelConfig) -> Dict[str, ParamSpec]:
    """Every tensor the architecture needs, in canonical order."""
    C, hid = cfg.C, cfg.ffn_hidden
    out: Dict[str, ParamSpec] = {}
    _conv(out, "stem", 3, C, 3)
    if cfg.shared_lk:
        _lk(out, "lk", cfg)
    for i in range(cfg.N):
        b = f"blocks.{i}"
        _norm(out, f"{b}.norm_in", C)
        _ffn(out, f"{b}.ffn_in", C, hid)
        _norm(out, f"{b}.attn.norm", C)
        t = (2 * cfg.ws - 1) ** 2
        out[f"{b}.attn.relpos"] = ParamSpec((cfg.heads, t), "table", t)
        _conv(out, f"{b}.attn.proj", C, C, 1)
        for j in range(cfg.M):
            lay = f"{b}.layers.{j}"
            if cfg.extra_ln:
                _norm(out, f"{lay}.ffn_norm", C)
            _ffn(out, f"{lay}.ffn", C, hid)
            if not cfg.shared_lk:
                _lk(out, f"{lay}.lk", cfg)
            _conv(out, f"{lay}.convattn.est_down", SLICE, cfg.h, 1)
            _conv(out, f"{lay}.convattn.est_up", cfg.h, DK_SIZE * DK_SIZE * SLICE, 1)
            _conv(out, f"{lay}.convattn.fuse", C, C, 1)
        _norm(out, f"{b}.norm_out", C)
        _conv(out, f"{b}.conv_out", C, C, 3)
    _conv(out, "body_conv", C, C, 3)
    _conv(out, "upsampler.conv", C, 3 * cfg.r * cfg.r, 3)
    return out


def count_params(cfg: ModelConfig) -> int:
    """Exact element count of every tensor; a shared large kernel counts once."""
    return sum(prod(s.shape) for s in param_specs(cfg).values())


def build_random_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Seeded init: conv weights/biases and bias tables uniform in +-1/sqrt(fan_in);
    layer norms start at weight 1, bias 0."""
    rng = np.random.default_rng(seed)
    store: WeightStore = {}
    for name, spec in param_specs(cfg).items():
        if spec.kind == "norm_weight":
            store[name] = np.ones(spec.shape, dtype=np.float32)
        elif spec.kind == "norm_bias":
            store[name] = np.zeros(spec.shape, dtype=np.float32)
        else:
            a = 1.0 / np.sqrt(spec.fan_in)
            store[name] = rng.uniform(-a, a, size=spec.shape).astype(np.float32)
    return store


def validate_store(store: WeightStore, cfg: ModelConfig) -> None:
    specs = param_specs(cfg)
    missing = [n for n in specs if n not in store]
    if missing:
        raise MissingTensorError(f"{len(missing)} tensor(s) missing, e.g. {missing[:3]}")
    extra = [n for n in store if n not in specs]
    if extra:
        raise ExtraTensorError(f"{len(extra)} unexpected tensor(s), e.g. {extra[:3]}")
    for n, s in specs.items():
        if tuple(store[n].shape) != s.shape:
            raise TensorShapeMismatchError(f"{n}: expected shape {s.shape}, got {tuple(store[n].shape)}")


# --------------------------------------------------------------------------
# forward pass
# --------------------------------------------------------------------------

def _kernel(store, name, groups=1):
    return ConvKernel(store[f"{name}.weight"], store.get(f"{name}.bias"), groups)


def _ln(x, store, name):
    return layer_norm_channels(x, store[f"{name}.weight"], store[f"{name}.bias"])


def shared_kernel(store: WeightStore, cfg: ModelConfig, prefix: str = "lk") -> SharedLargeKernel:
    if cfg.decomposed_lk:
        return SharedLargeKernel(pointwise=store[f"{prefix}.pw.weight"], depthwise=store[f"{prefix}.dw.weight"])
    return SharedLargeKernel(composed=store[f"{prefix}.weight"])


@dataclass
class FFNParams:
    pw1: ConvKernel
    dw: ConvKernel
    pw2: ConvKernel

    @classmethod
    def from_store(cls, store, prefix):
        hid = store[f"{prefix}.pw1.weight"].shape[0]
        return cls(_kernel(store, f"{prefix}.pw1"), _kernel(store, f"{prefix}.dw", groups=hid),
                   _kernel(store, f"{prefix}.pw2"))


def conv_ffn(x: np.ndarray, params: FFNParams) -> np.ndarray:
    """1x1 expand -> GELU -> depthwise 3x3 -> 1x1 project."""
    if x.shape[1] != params.pw1.weight.shape[1]:
        raise ShapeError(f"ConvFFN expects {params.pw1.weight.shape[1]} channels, got {x.shape[1]}",
                         axis="channel")
    y = gelu(conv2d(x, params.pw1))
    y = conv2d(y, params.dw, padding=1)
    return conv2d(y, params.pw2)


def convattn_params(store, prefix) -> ConvAttnParams:
    return ConvAttnParams(_kernel(store, f"{prefix}.est_down"), _kernel(store, f"{prefix}.est_up"),
                          _kernel(store, f"{prefix}.fuse"))


def attn_params(store, prefix) -> AttnParams:
    return AttnParams(store[f"{prefix}.norm.weight"], store[f"{prefix}.norm.bias"], store[f"{prefix}.relpos"],
                      _kernel(store, f"{prefix}.proj"))


@dataclass
class ForwardProbe:
    """Optional side outputs of a forward pass.

    ``trace`` receives (layer_id, feature) for every self-attention and
    ConvAttn output before its residual add. ``attn_maps`` (naive backend
    only) receives each attention layer's probabilities averaged over
    windows and heads.
    """

    trace: Optional[List[Tuple[str, np.ndarray]]] = None
    attn_maps: Optional[Dict[str, np.ndarray]] = None
    workspace: AttentionWorkspace = field(default_factory=AttentionWorkspace)


def esc_block(f_prev, lk: SharedLargeKernel, store: WeightStore, cfg: ModelConfig, index: int,
              probe: Optional[ForwardProbe] = None) -> np.ndarray:
    b = f"blocks.{index}"
    probe = probe or ForwardProbe()
    x = conv_ffn(_ln(f_prev, store, f"{b}.norm_in"), FFNParams.from_store(store, f"{b}.ffn_in"))

    attn_sum = None
    if probe.attn_maps is not None:
        if cfg.backend != "naive":
            raise ValueError("attention maps are only available with the naive backend")
        attn_sum = np.zeros((cfg.ws ** 2, cfg.ws ** 2))
    a = self_attention_layer(x, attn_params(store, f"{b}.attn"), cfg, probe.workspace, attn_sum)
    if attn_sum is not None:
        n_maps = x.shape[0] * (x.shape[2] // cfg.ws) * (x.shape[3] // cfg.ws) * cfg.heads
        probe.attn_maps[f"{b}.attn"] = attn_sum / n_maps
    if probe.trace is not None:
        probe.trace.append((f"{b}.attn", a))
    x = x + a

    for j in range(cfg.M):
        lay = f"{b}.layers.{j}"
        t = _ln(x, store, f"{lay}.ffn_norm") if cfg.extra_ln else x
        t = conv_ffn(t, FFNParams.from_store(store, f"{lay}.ffn"))
        layer_lk = lk if cfg.shared_lk else shared_kernel(store, cfg, f"{lay}.lk")
        c = conv_attn(t, layer_lk, convattn_params(store, f"{lay}.convattn"))
        if probe.trace is not None:
            probe.trace.append((f"{lay}.convattn", c))
        x = x + c
    return f_prev + conv2d(_ln(x, store, f"{b}.norm_out"), _kernel(store, f"{b}.conv_out"), padding=1)


def esc_forward(img: np.ndarray, weights: WeightStore, cfg: ModelConfig,
                probe: Optional[ForwardProbe] = None) -> np.ndarray:
    """Super-resolve ``img`` (n, 3, H, W) in [0, 1] to (n, 3, rH, rW)."""
    if img.ndim != 4:
        raise ShapeError("image must be (n, 3, H, W)", axis="rank")
    n, c, H, W = img.shape
    if c != 3:
        raise ShapeError(f"image must have 3 channels, got {c}", axis="channel")
    if n < 1 or H < 1 or W < 1:
        raise ShapeError(f"non-positive image dims {img.shape}", axis="height" if H < 1 else "width")
    img = img if img.dtype.kind == "f" else img.astype(np.float32)

    f0 = conv2d(img, _kernel(weights, "stem"), padding=1)
    ph, pw = (-H) % cfg.ws, (-W) % cfg.ws
    try:
        f0p = pad_reflect(f0, (0, ph, 0, pw))
    except ShapeError as exc:
        raise ShapeError(f"image {H}x{W} too small to reflect-pad to window size {cfg.ws}: {exc}",
                         axis=exc.axis) from exc
    lk = shared_kernel(weights, cfg) if cfg.shared_lk else None
    x = f0p
    for i in range(cfg.N):
        x = esc_block(x, lk, weights, cfg, i, probe)
    feat = conv2d(x, _kernel(weights, "body_conv"), padding=1) + f0p
    feat = crop(feat, (0, ph, 0, pw))

    up = conv2d(feat, _kernel(weights, "upsampler.conv"), padding=1)
    if cfg.skip == "repeat":
        return pixel_shuffle(up + repeat_skip(img, cfg.r).astype(up.dtype, copy=False), cfg.r)
    return pixel_shuffle(up, cfg.r) + bicubic_resize(img, cfg.r).astype(up.dtype, copy=False)


# --------------------------------------------------------------------------
# multiply-accumulate counter (1 MAC = 1 FLOP)
# --------------------------------------------------------------------------

def conv_macs(cin: int, cout: int, k: int, h: int, w: int, groups: int = 1) -> int:
    return cout * (cin // groups) * k * k * h * w


def flop_breakdown(cfg: ModelConfig, in_h: int, in_w: int) -> Dict[str, int]:
    """MACs per component for an (in_h, in_w) input.

    Blocks and the body conv run on the window-padded grid, the stem and the
    upsampler on the original one. Layer norms count one MAC per element
    (the affine); GELU, softmax and pooling are not counted.
    """
    C, hid, k = cfg.C, cfg.ffn_hidden, cfg.lk_size
    hp, wp = in_h + (-in_h) % cfg.ws, in_w + (-in_w) % cfg.ws
    px = hp * wp
    P = cfg.ws * cfg.ws

    def ffn():
        return conv_macs(C, hid, 1, hp, wp) + conv_macs(hid, hid, 3, hp, wp, hid) + conv_macs(hid, C, 1, hp, wp)

    if cfg.decomposed_lk:
        lk = conv_macs(SLICE, SLICE, 1, hp, wp) + conv_macs(SLICE, SLICE, k, hp, wp, SLICE)
    else:
        lk = conv_macs(SLICE, SLICE, k, hp, wp)
    dk = conv_macs(SLICE, SLICE, DK_SIZE, hp, wp, SLICE)
    est = SLICE * cfg.h + cfg.h * DK_SIZE * DK_SIZE * SLICE
    n_norms = 3 + (cfg.M if cfg.extra_ln else 0)

    out = {
        "stem": conv_macs(3, C, 3, in_h, in_w),
        "norms": cfg.N * n_norms * C * px,
        "conv_ffn": cfg.N * (cfg.M + 1) * ffn(),
        "attention": cfg.N * (2 * P * C * px + conv_macs(C, C, 1, hp, wp)),
        "conv_attn": cfg.N * cfg.M * (lk + dk + est + conv_macs(C, C, 1, hp, wp)),
        "block_conv": cfg.N * conv_macs(C, C, 3, hp, wp),
        "body_conv": conv_macs(C, C, 3, hp, wp),
        "upsampler": conv_macs(C, 3 * cfg.r * cfg.r, 3, in_h, in_w),
    }
    return out


def count_flops(cfg: ModelConfig, in_h: int, in_w: int) -> int:
    return sum(flop_breakdown(cfg, in_h, in_w).values())
