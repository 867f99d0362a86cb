"""Oracle-equivalence checks behind ``escsr verify``.

Each check returns ``(name, passed, detail)``. They are cheap versions of
the properties the test suite pins down, meant to be run on a fresh
install or a new machine.
"""
import tempfile
from pathlib import Path

import numpy as np

from .attention import attention_naive, attention_tiled
from .convattn import (ConvAttnParams, SharedLargeKernel, conv_attn_decomposed, conv_attn_forward,
                       conv_attn_merged, estimate_dynamic_kernel, zero_pad_kernel)
from .io import load_image, load_weights, save_image, save_weights
from .network import ModelConfig, build_random_weights, esc_forward
from .tensor_ops import ConvKernel, conv2d, pixel_shuffle, repeat_skip


def _rand_params(rng, C, h=8, identity=False):
    def k(co, ci):
        return ConvKernel(rng.uniform(-0.3, 0.3, (co, ci, 1, 1)).astype(np.float32),
                          rng.uniform(-0.1, 0.1, co).astype(np.float32))

    p = ConvAttnParams(k(h, 16), k(144, h), k(C, C))
    if identity:
        p.est_up.weight[:] = 0
        p.est_up.bias[:] = 0
        p.fuse.weight[:] = np.eye(C, dtype=np.float32)[:, :, None, None]
        p.fuse.bias[:] = 0
    return p


def check_attention(seeds):
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        for ws in (8, 16, 32):
            for heads in (1, 2, 4):
                d = 8 if seed % 2 else 16
                P = ws * ws
                q, k, v = (rng.standard_normal((1, heads, P, d)).astype(np.float32) for _ in range(3))
                table = rng.standard_normal((heads, (2 * ws - 1) ** 2)).astype(np.float32)
                ref, _ = attention_naive(q, k, v, table, ws)
                for block in (1, 7, 64, P):
                    out, _ = attention_tiled(q, k, v, table, ws, block)
                    worst = max(worst, float(np.abs(out - ref).max()))
    return "tiled == naive attention", worst <= 1e-4, f"max |diff| {worst:.2e} (tol 1e-4)"


def check_memory():
    rng = np.random.default_rng(0)
    ws, heads, P = 32, 4, 1024
    q = rng.standard_normal((1, heads, P, 16)).astype(np.float32)
    table = np.zeros((heads, 63 * 63), np.float32)
    _, wn = attention_naive(q, q, q, table, ws)
    _, wt = attention_tiled(q, q, q, table, ws, 64)
    ratio = wn.aux_floats_peak / wt.aux_floats_peak
    bound = heads * (2 * P * 64 + 4 * P)
    ok = ratio >= 8 and wt.aux_floats_peak <= bound and wn.aux_floats_peak >= heads * P * P
    return "attention scratch ratio", ok, f"naive/tiled = {ratio:.1f} (need >= 8)"


def _decomposed_oracle(x, pw, dw, p):
    # one dense 13x13 kernel per item: K[o, i] = (ZP(DK) + dw)[o] * pw[o, i]
    f_att = x[:, :16]
    dk = estimate_dynamic_kernel(f_att, p)
    res = []
    for i in range(x.shape[0]):
        spatial = zero_pad_kernel(dk[i, :, 0], 13) + dw[:, 0]
        dense = spatial[:, None] * pw[:, :, 0, 0][:, :, None, None]
        res.append(conv2d(f_att[i:i + 1], ConvKernel(dense), padding=6))
    return conv2d(np.concatenate([np.concatenate(res), x[:, 16:]], axis=1), p.fuse)


def check_convattn(trials):
    rng = np.random.default_rng(1)
    merge_err = dec_err = 0.0
    ident_ok = True
    for _ in range(trials):
        C = int(rng.choice([16, 24, 32]))
        x = rng.standard_normal((1, C, 9, 11)).astype(np.float32)
        p = _rand_params(rng, C)
        lk = SharedLargeKernel(composed=rng.uniform(-0.05, 0.05, (16, 16, 13, 13)).astype(np.float32))
        merge_err = max(merge_err, float(np.abs(conv_attn_forward(x, lk, p) - conv_attn_merged(x, lk, p)).max()))
        pw = rng.uniform(-0.3, 0.3, (16, 16, 1, 1)).astype(np.float32)
        dw = rng.uniform(-0.1, 0.1, (16, 1, 13, 13)).astype(np.float32)
        dec = conv_attn_decomposed(x, SharedLargeKernel(pointwise=pw, depthwise=dw), p)
        dec_err = max(dec_err, float(np.abs(dec - _decomposed_oracle(x, pw, dw, p)).max()))
        pid = _rand_params(rng, C, identity=True)
        delta = np.zeros((16, 16, 13, 13), np.float32)
        delta[np.arange(16), np.arange(16), 6, 6] = 1
        ident_ok &= bool(np.array_equal(conv_attn_forward(x, SharedLargeKernel(composed=delta), pid), x))
    ok = merge_err <= 1e-5 and dec_err <= 1e-4 and ident_ok
    return "ConvAttn identities", ok, f"merge {merge_err:.1e}, decomposed {dec_err:.1e}, identity {ident_ok}"


def check_skip():
    img = np.random.default_rng(2).random((1, 3, 5, 7)).astype(np.float32)
    ok = all(np.array_equal(pixel_shuffle(repeat_skip(img, r), r), img.repeat(r, 2).repeat(r, 3)) for r in (1, 2, 3, 4))
    return "repeat skip == nearest neighbour", ok, ""


def check_network():
    cfg = ModelConfig.preset("esc", 2, C=32, N=1, M=2, ws=8, heads=2)
    w = build_random_weights(cfg, 3)
    img = np.random.default_rng(3).random((1, 3, 13, 18)).astype(np.float32)
    a = esc_forward(img, w, cfg)
    b = esc_forward(img, w, cfg.with_(backend="naive"))
    diff = float(np.abs(a - b).max())
    ok = a.shape == (1, 3, 26, 36) and np.isfinite(a).all() and diff <= 1e-4
    return "network backends agree", ok, f"max |diff| {diff:.1e}"


def check_roundtrips():
    rng = np.random.default_rng(4)
    store = {"a.weight": rng.standard_normal((3, 2, 1, 5)).astype(np.float32), "b": np.arange(4, dtype=np.float32)}
    img = rng.integers(0, 256, (1, 3, 6, 5)).astype(np.float32) / np.float32(255)
    with tempfile.TemporaryDirectory() as tmp:
        save_weights(store, Path(tmp) / "w.escw")
        back = load_weights(Path(tmp) / "w.escw")
        ok = list(back) == list(store) and all(np.array_equal(back[k], store[k]) for k in store)
        for ext in ("png", "ppm"):
            save_image(img, Path(tmp) / f"i.{ext}")
            ok &= bool(np.array_equal(load_image(Path(tmp) / f"i.{ext}"), img))
    return "weight / image round trips", ok, ""


def run_all(seeds=3):
    trials = max(10, 20 * seeds)
    return [check_attention(seeds), check_memory(), check_convattn(trials), check_skip(), check_network(),
            check_roundtrips()]
