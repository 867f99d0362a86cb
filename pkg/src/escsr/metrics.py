"""Evaluation and analysis: Y-channel PSNR/SSIM, CKA / cosine layer
similarity, finite-difference attribution and the diffusion index."""
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError

PSNR_INF = math.inf

FeatureTrace = List[Tuple[str, np.ndarray]]


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma on the 16-235 scale from RGB in [0, 1]; returns (n, 1, h, w) float64."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError("rgb_to_y expects (n, 3, h, w)", axis="channel")
    x = img.astype(np.float64)
    y = 16.0 + 65.481 * x[:, 0] + 128.553 * x[:, 1] + 24.966 * x[:, 2]
    return y[:, None]


def _cropped_y(sr, hr, scale):
    if sr.shape != hr.shape:
        raise ShapeError(f"shape mismatch {sr.shape} vs {hr.shape}", axis="shape")
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    h, w = sr.shape[2:]
    if h <= 2 * scale or w <= 2 * scale:
        raise ShapeError(f"{h}x{w} image too small to crop {scale} pixels per side",
                         axis="height" if h <= 2 * scale else "width")
    ys = rgb_to_y(sr) if sr.shape[1] == 3 else sr.astype(np.float64)
    yh = rgb_to_y(hr) if hr.shape[1] == 3 else hr.astype(np.float64)
    if scale:
        ys = ys[:, :, scale:-scale, scale:-scale]
        yh = yh[:, :, scale:-scale, scale:-scale]
    return ys, yh


def psnr_y(sr: np.ndarray, hr: np.ndarray, scale: int) -> float:
    """PSNR in dB on the border-cropped Y channel; ``math.inf`` when identical."""
    ys, yh = _cropped_y(sr, hr, scale)
    mse = float(np.mean((ys - yh) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable 'valid' filtering of a 2-D array
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def _ssim_plane(a, b):
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    g = _gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_y(sr: np.ndarray, hr: np.ndarray, scale: int) -> float:
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows of the cropped Y channel."""
    ys, yh = _cropped_y(sr, hr, scale)
    if ys.shape[2] < 11 or ys.shape[3] < 11:
        raise ShapeError("cropped image smaller than the 11x11 SSIM window", axis="height")
    return float(np.mean([_ssim_plane(ys[i, 0], yh[i, 0]) for i in range(ys.shape[0])]))


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA of two (samples, features) matrices, centred per column."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError("CKA needs 2-D matrices with the same number of rows", axis="samples")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    nx = np.linalg.norm(x.T @ x)
    ny = np.linalg.norm(y.T @ y)
    if nx == 0 or ny == 0:
        raise ValueError("CKA undefined for a zero (or constant) representation")
    return float(np.linalg.norm(y.T @ x) ** 2 / (nx * ny))


def feature_matrix(t: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n*h*w, c): every spatial position is a sample."""
    n, c, h, w = t.shape
    return t.transpose(0, 2, 3, 1).reshape(-1, c)


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(a @ b / (na * nb))


def inter_layer_similarity(trace: Sequence[Tuple[str, np.ndarray]], kind: str = "cka") -> np.ndarray:
    """Symmetric layer-by-layer similarity matrix with unit diagonal.

    ``cka`` compares (positions x channels) feature matrices; ``cosine``
    compares the channel-mean-pooled spatial maps, flattened.
    """
    if len(trace) < 2:
        raise ValueError("need at least two traced layers")
    shapes = {(t.shape[0],) + t.shape[2:] for _, t in trace}
    if len(shapes) != 1:
        raise ShapeError("traced features must share batch and spatial dims", axis="spatial")
    if kind == "cka":
        feats = [feature_matrix(np.asarray(t, dtype=np.float64)) for _, t in trace]
        sim = linear_cka
    elif kind == "cosine":
        feats = [np.asarray(t, dtype=np.float64).mean(axis=1).ravel() for _, t in trace]
        sim = _cosine
    else:
        raise ValueError(f"unknown similarity kind {kind!r}")
    n = len(feats)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = sim(feats[i], feats[j])
    return out


@dataclass
class AttributionMap:
    values: np.ndarray      # (h, w), nonnegative
    target: Tuple[int, int]

    @property
    def di(self) -> float:
        return diffusion_index(self)


def perturbation_attribution(forward: Callable[[np.ndarray], np.ndarray], img: np.ndarray,
                             target: Tuple[int, int], eps: float = 1e-3, batch: int = 1,
                             channel_mean_output: bool = True) -> AttributionMap:
    """Positive part of d out[target] / d img[c, y, x], by central differences,
    averaged over input channels.

    ``forward`` maps (b, c, h, w) to (b, c', H', W'); it is called with
    ``batch`` perturbed copies at a time and in float64. The output at the
    target pixel is averaged over output channels when ``channel_mean_output``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 4 or img.shape[0] != 1:
        raise ShapeError("attribution expects a single (1, c, h, w) image", axis="batch")
    _, c, h, w = img.shape
    ti, tj = target
    probe = forward(img)
    if not (0 <= ti < probe.shape[2] and 0 <= tj < probe.shape[3]):
        raise ValueError(f"target {target} outside output {probe.shape[2:]}")

    def read(out):
        v = out[:, :, ti, tj]
        return v.mean(axis=1) if channel_mean_output else v[:, 0]

    coords = [(ch, y, x) for ch in range(c) for y in range(h) for x in range(w)]
    grad = np.zeros((c, h, w))
    for s in range(0, len(coords), batch):
        chunk = coords[s:s + batch]
        plus = np.repeat(img, len(chunk), axis=0)
        minus = plus.copy()
        for b, (ch, y, x) in enumerate(chunk):
            plus[b, ch, y, x] += eps
            minus[b, ch, y, x] -= eps
        diff = (read(forward(plus)) - read(forward(minus))) / (2 * eps)
        for b, (ch, y, x) in enumerate(chunk):
            grad[ch, y, x] = diff[b]
    return AttributionMap(np.maximum(grad, 0).mean(axis=0), (ti, tj))


def gini(values: np.ndarray) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0 or np.any(v < 0):
        raise ValueError("Gini needs a nonempty nonnegative array")
    total = v.sum()
    if total == 0:
        raise ValueError("Gini undefined for an all-zero map")
    n = v.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * v) / (n * total))


def diffusion_index(a) -> float:
    """(1 - Gini) * 100: 100 for a flat map, 100/n for a single spike among n."""
    values = a.values if isinstance(a, AttributionMap) else a
    return (1.0 - gini(values)) * 100.0
