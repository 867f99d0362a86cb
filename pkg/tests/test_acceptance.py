"""Acceptance criteria 1-10, each at its stated tolerance.

Every criterion prints one ``PASS`` / ``FAIL`` line. Run with pytest, or
directly with ``python tests/test_acceptance.py`` for just the summary.
"""
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from escsr import _accel
from escsr.attention import attention_naive, attention_tiled
from escsr.convattn import (SLICE, ConvAttnParams, SharedLargeKernel, conv_attn_decomposed, conv_attn_forward,
                            conv_attn_merged, estimate_dynamic_kernel, merge_dk_into_lk, zero_pad_kernel)
from escsr.io import load_image, load_weights, save_image, save_weights
from escsr.metrics import diffusion_index, linear_cka, perturbation_attribution, psnr_y, ssim_y
from escsr.network import ModelConfig, build_random_weights, count_flops, count_params, esc_forward
from escsr.tensor_ops import ConvKernel, conv2d

FIXTURES = Path(__file__).parent / "fixtures"


def _rel(value, target):
    return (value - target) / target


# ---- 1 ----------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = 8 if seed % 2 == 0 else 16
        for ws in (8, 16, 32):
            P = ws * ws
            for heads in (1, 2, 4):
                q, k, v = (rng.standard_normal((1, heads, P, d)).astype(np.float32) for _ in range(3))
                table = rng.standard_normal((heads, (2 * ws - 1) ** 2)).astype(np.float32)
                ref, _ = attention_naive(q, k, v, table, ws)
                for block in (1, 7, 64, P):
                    out, _ = attention_tiled(q, k, v, table, ws, block)
                    worst = max(worst, float(np.abs(out - ref).max()))
                    cases += 1
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and secs < 120
    return ok, f"{cases} cases, max |tiled - naive| = {worst:.2e} (tol 1e-4), {secs:.1f}s (limit 120s)"


# ---- 2 ----------------------------------------------------------------------

def criterion_2():
    rng = np.random.default_rng(0)
    ws, heads, P, B = 32, 4, 1024, 64
    q, k, v = (rng.standard_normal((1, heads, P, 16)).astype(np.float32) for _ in range(3))
    table = rng.standard_normal((heads, 63 * 63)).astype(np.float32)
    _, naive = attention_naive(q, k, v, table, ws)
    parts, ok = [], True
    flavours = ["numba", "numpy"] if _accel.HAVE_NUMBA else ["numpy"]
    for flavour in flavours:
        with _accel.use_numba(flavour == "numba"):
            _, tiled = attention_tiled(q, k, v, table, ws, B)
        ratio = naive.aux_floats_peak / tiled.aux_floats_peak
        ok &= ratio >= 8 and tiled.aux_floats_peak <= heads * (2 * P * B + 4 * P)
        parts.append(f"{flavour} {ratio:.1f}x")
    ok &= naive.aux_floats_peak >= heads * P * P
    return ok, f"naive/tiled aux_floats_peak: {', '.join(parts)} (need >= 8)"


# ---- 3 ----------------------------------------------------------------------

def criterion_3():
    parts, ok = [], True
    for variant, target in (("esc", 947), ("esc-light", 603), ("esc-fp", 524)):
        n = count_params(ModelConfig.preset(variant, 2))
        dev = _rel(n / 1e3, target)
        ok &= abs(dev) <= 0.05
        parts.append(f"{variant} {n / 1e3:.1f}K vs {target}K ({100 * dev:+.2f}%)")
    esc = [count_params(ModelConfig.preset("esc", r)) for r in (2, 3, 4)]
    ok &= esc[0] < esc[1] < esc[2]
    parts.append("ESC x2<x3<x4: " + " < ".join(f"{n / 1e3:.1f}K" for n in esc))
    return ok, "; ".join(parts)


# ---- 4 ----------------------------------------------------------------------

def criterion_4():
    esc = count_flops(ModelConfig.preset("esc", 2), 360, 640) / 1e9
    fp = count_flops(ModelConfig.preset("esc-fp", 4), 180, 320) / 1e9
    d1, d2 = _rel(esc, 592.0), _rel(fp, 60.8)
    ok = abs(d1) <= 0.10 and abs(d2) <= 0.10
    return ok, (f"ESC x2 @640x360 {esc:.1f}G vs 592.0G ({100 * d1:+.2f}%); "
                f"ESC-FP x4 @320x180 {fp:.1f}G vs 60.8G ({100 * d2:+.2f}%)")


# ---- 5 ----------------------------------------------------------------------

def _convattn_params(rng, C, h=8):
    def k(co, ci):
        return ConvKernel(rng.uniform(-0.4, 0.4, (co, ci, 1, 1)).astype(np.float32),
                          rng.uniform(-0.1, 0.1, co).astype(np.float32))
    return ConvAttnParams(k(h, SLICE), k(9 * SLICE, h), k(C, C))


def _dense_composed_oracle(x, pw, dw, p):
    # one composed-mode layer per item whose dense kernel is pw followed by ZP(DK) + dw
    dk = estimate_dynamic_kernel(x[:, :SLICE], p)
    size = dw.shape[-1]
    outs = []
    for i in range(x.shape[0]):
        spatial = zero_pad_kernel(dk[i, :, 0].astype(np.float64), size) + dw[:, 0]
        dense = spatial[:, None] * pw[:, :, 0, 0][:, :, None, None]
        res = conv2d(x[i:i + 1, :SLICE].astype(np.float64), ConvKernel(dense), padding=size // 2)
        outs.append(res)
    cat = np.concatenate([np.concatenate(outs), x[:, SLICE:].astype(np.float64)], axis=1)
    return conv2d(cat, ConvKernel(p.fuse.weight.astype(np.float64), p.fuse.bias.astype(np.float64)))


def criterion_5(trials=1000):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    merge_err = dec_err = 0.0
    exact = True
    for _ in range(trials):
        C = int(rng.choice([16, 24, 32]))
        h, w = (int(v) for v in rng.integers(3, 9, 2))
        x = rng.standard_normal((1, C, h, w)).astype(np.float32)
        p = _convattn_params(rng, C)
        # (a) merged single kernel vs two-conv form, at the kernel level and through the module
        dk = rng.standard_normal((SLICE, 1, 3, 3)).astype(np.float32)
        lk = (rng.standard_normal((SLICE, SLICE, 13, 13)) * 0.1).astype(np.float32)
        fa = x[:, :SLICE]
        two = conv2d(fa, ConvKernel(dk, groups=SLICE), padding=1) + conv2d(fa, ConvKernel(lk), padding=6)
        one = conv2d(fa, merge_dk_into_lk(ConvKernel(dk, groups=SLICE), ConvKernel(lk)), padding=6)
        shared = SharedLargeKernel(composed=lk)
        merge_err = max(merge_err, float(np.abs(two - one).max()),
                        float(np.abs(conv_attn_forward(x, shared, p) - conv_attn_merged(x, shared, p)).max()))
        # (b) decomposed vs dense-composed oracle
        pw = (rng.standard_normal((SLICE, SLICE, 1, 1)) * 0.3).astype(np.float32)
        dw = (rng.standard_normal((SLICE, 1, 13, 13)) * 0.1).astype(np.float32)
        dec = conv_attn_decomposed(x, SharedLargeKernel(pointwise=pw, depthwise=dw), p)
        dec_err = max(dec_err, float(np.abs(dec - _dense_composed_oracle(x, pw, dw, p)).max()))
        # (c) identity configuration: delta LK, zero DK estimator, identity fuse
        p.est_up.weight[:] = 0
        p.est_up.bias[:] = 0
        p.fuse.weight[:] = np.eye(C, dtype=np.float32)[:, :, None, None]
        p.fuse.bias[:] = 0
        delta = np.zeros((SLICE, SLICE, 13, 13), np.float32)
        delta[np.arange(SLICE), np.arange(SLICE), 6, 6] = 1
        exact &= np.array_equal(conv_attn_forward(x, SharedLargeKernel(composed=delta), p), x)
    secs = time.perf_counter() - t0
    ok = merge_err <= 1e-5 and dec_err <= 1e-4 and exact and secs < 60
    return ok, (f"{trials} trials: merge {merge_err:.2e} (tol 1e-5), decomposed {dec_err:.2e} (tol 1e-4), "
                f"identity {'exact' if exact else 'NOT exact'}, {secs:.1f}s (limit 60s)")


# ---- 6 ----------------------------------------------------------------------

def criterion_6():
    rng = np.random.default_rng(6)
    img = rng.random((1, 3, 50, 70)).astype(np.float32)
    ok, parts = True, []
    for r in (2, 3, 4):
        cfg = ModelConfig.preset("esc", r)
        store = build_random_weights(cfg, r)
        a = esc_forward(img, store, cfg)
        b = esc_forward(img, store, cfg)
        c = esc_forward(img, store, cfg.with_(backend="naive"))
        good_shape = a.shape == (1, 3, 50 * r, 70 * r)
        finite = bool(np.isfinite(a).all())
        bitwise = a.tobytes() == b.tobytes()
        diff = float(np.abs(a - c).max())
        ok &= good_shape and finite and bitwise and diff <= 1e-4
        parts.append(f"x{r} {a.shape[2]}x{a.shape[3]} finite={finite} bitwise={bitwise} backends {diff:.1e}")
    cfg = ModelConfig.preset("esc", 2)
    store = build_random_weights(cfg, 0)
    for k in store:
        if not (".norm" in k or k.endswith("relpos")):
            store[k][:] = 0
    nn = img.repeat(2, axis=2).repeat(2, axis=3)
    zero_ok = np.array_equal(esc_forward(img, store, cfg), nn)
    ok &= zero_ok
    parts.append(f"zero deep path == nearest neighbour: {zero_ok}")
    return ok, "; ".join(parts)


# ---- 7 ----------------------------------------------------------------------

def criterion_7():
    rng = np.random.default_rng(7)
    base = np.full((1, 1, 16, 16), 120.0)
    p1 = psnr_y(base, base + 1, 2)
    x = rng.random((1, 3, 24, 24))
    s = ssim_y(x, x, 2)
    y = x.copy()
    y[:, :, :2] = 0
    y[:, :, -2:] = 1
    y[:, :, :, :2] = 0.5
    y[:, :, :, -2:] = 0.25
    crop_inf = psnr_y(x, y, 2) == math.inf
    feats = rng.standard_normal((256, 32))
    q, _ = np.linalg.qr(rng.standard_normal((32, 32)))
    cka = linear_cka(feats, feats @ q)
    ok = abs(p1 - 48.1308) <= 1e-3 and abs(s - 1) <= 1e-12 and crop_inf and abs(cka - 1) <= 1e-6
    return ok, (f"1-level PSNR {p1:.4f} dB (48.1308 +-1e-3); SSIM(x,x) {s:.6f}; border-only PSNR "
                f"{'inf' if crop_inf else 'finite'}; CKA(X,XR) 1{cka - 1:+.1e}")


# ---- 8 ----------------------------------------------------------------------

def _chain(weights, sign=1.0):
    def fwd(x):
        for w in weights:
            x = conv2d(x, ConvKernel(w), padding=6)
        return sign * x
    return fwd


def criterion_8():
    rng = np.random.default_rng(8)
    ok, parts = True, []
    for k in (1, 2, 3):
        size = 12 * k + 9
        c = size // 2
        weights = [rng.standard_normal((1, 1, 13, 13)) for _ in range(k)]
        img = rng.random((1, 1, size, size))
        pos = perturbation_attribution(_chain(weights), img, (c, c), batch=size * size).values
        # positive part of the negated map recovers the negative part, so together they give |gradient|
        neg = perturbation_attribution(_chain(weights, -1.0), img, (c, c), batch=size * size).values
        yy, xx = np.mgrid[:size, :size]
        inside = np.maximum(abs(yy - c), abs(xx - c)) <= 6 * k
        outside_zero = bool((pos[~inside] == 0).all() and (neg[~inside] == 0).all())
        inside_nonzero = bool(((pos + neg)[inside] > 0).all())
        ok &= outside_zero and inside_nonzero
        parts.append(f"k={k}: zero beyond {6 * k}: {outside_zero}, nonzero within: {inside_nonzero}")
    di_uniform = diffusion_index(np.full(100, 0.7))
    point = []
    for n in (10, 100, 1000):
        v = np.zeros(n)
        v[0] = 1.0
        point.append(diffusion_index(v) - 100.0 / n)
    ok &= abs(di_uniform - 100) <= 1e-9 and max(abs(e) for e in point) <= 1e-9
    parts.append(f"DI(uniform) {di_uniform:.6f}; DI(point mass) - 100/n max {max(abs(e) for e in point):.1e}")
    return ok, "; ".join(parts)


# ---- 9 ----------------------------------------------------------------------

def criterion_9():
    parts, ok = [], True
    for variant in ("esc", "esc-light"):
        cfg = ModelConfig.preset(variant, 2)
        delta = count_params(cfg.with_(shared_lk=False)) - count_params(cfg)
        expect = (cfg.N * cfg.M - 1) * 43264
        ok &= delta == expect
        parts.append(f"{variant} delta {delta} == ({cfg.N}*{cfg.M}-1)*43264 = {expect}")
    return ok, "; ".join(parts)


# ---- 10 ---------------------------------------------------------------------

def criterion_10():
    rng = np.random.default_rng(10)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = ModelConfig.preset("esc-fp", 2)
        store = build_random_weights(cfg, 1)
        save_weights(store, tmp / "w.escw")
        back = load_weights(tmp / "w.escw", cfg)
        w_ok = list(back) == list(store) and all(back[k].tobytes() == store[k].tobytes() for k in store)
        img_ok = True
        for ext in (".png", ".ppm"):
            t = rng.integers(0, 256, (1, 3, 11, 17)).astype(np.float32) / np.float32(255)
            save_image(t, tmp / f"i{ext}")
            img_ok &= load_image(tmp / f"i{ext}").tobytes() == t.tobytes()
    fx = load_weights(FIXTURES / "single_tensor.escw")
    fx_ok = list(fx) == ["t"] and fx["t"].shape == (1, 1, 1, 2) and fx["t"].ravel().tolist() == [1.0, 2.0]
    return w_ok and img_ok and fx_ok, (f"weights round trip {w_ok}; png/ppm round trip {img_ok}; "
                                       f"committed fixture decodes to (1.0, 2.0): {fx_ok}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10]


def _report(n, ok, detail):
    return f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("n", range(1, 11))
def test_acceptance(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + _report(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = [fn() for fn in CRITERIA]
    for n, (ok, detail) in enumerate(results, 1):
        print(_report(n, ok, detail))
    raise SystemExit(0 if all(ok for ok, _ in results) else 1)
