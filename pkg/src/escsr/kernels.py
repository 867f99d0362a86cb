"""Hot inner loops, each in a numba flavour and a numpy flavour.

The public wrappers pick the flavour through :mod:`escsr._accel`. Both
flavours are deterministic; they are not bitwise identical to each other
(different summation order), only equal to float tolerance.
"""
import math

import numpy as np

from ._accel import njit, numba_enabled


# --------------------------------------------------------------------------
# depthwise correlation
# --------------------------------------------------------------------------

@njit(cache=True)
def _depthwise_nb(xp, w, out, stride):
    n, c, oh, ow = out.shape
    kh, kw = w.shape[2], w.shape[3]
    per_item = w.shape[0] > 1
    for b in range(n):
        wb = b if per_item else 0
        for ch in range(c):
            o = out[b, ch]
            x = xp[b, ch]
            for dy in range(kh):
                for dx in range(kw):
                    t = w[wb, ch, dy, dx]
                    if t == 0:
                        continue
                    for i in range(oh):
                        row = i * stride + dy
                        for j in range(ow):
                            o[i, j] += t * x[row, j * stride + dx]


def _depthwise_np(xp, w, out, stride):
    n, c, oh, ow = out.shape
    kh, kw = w.shape[2], w.shape[3]
    for dy in range(kh):
        for dx in range(kw):
            t = w[:, :, dy, dx][:, :, None, None]
            if not t.any():
                continue
            out += t * xp[:, :, dy:dy + stride * (oh - 1) + 1:stride, dx:dx + stride * (ow - 1) + 1:stride]


def depthwise_correlate(xp, w, out_hw, stride=1):
    """Depthwise correlation of an already padded input.

    ``w`` has shape (1 or n, c, kh, kw); a leading dim of n applies one
    kernel set per batch item (used for dynamic kernels).
    """
    n, c = xp.shape[:2]
    dtype = np.result_type(xp.dtype, w.dtype)
    xp = np.ascontiguousarray(xp, dtype=dtype)
    w = np.ascontiguousarray(w, dtype=dtype)
    out = np.zeros((n, c) + tuple(out_hw), dtype=dtype)
    if numba_enabled():
        _depthwise_nb(xp, w, out, stride)
    else:
        _depthwise_np(xp, w, out, stride)
    return out


# --------------------------------------------------------------------------
# tiled (online-softmax) window attention
# --------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def _tiled_attention_nb(qT, k, v, table, ys, xs, ws, block, scale, outT):
    # Queries run along the innermost axis: qT and outT are (nw, nh, d, P).
    # Keys are visited one at a time inside each block of ``block`` keys.
    nw, nh, d, P = qT.shape
    span = 2 * ws - 1
    S = np.empty((block, P), dtype=qT.dtype)
    m = np.empty(P, dtype=qT.dtype)
    l = np.empty(P, dtype=qT.dtype)
    mn = np.empty(P, dtype=qT.dtype)
    corr = np.empty(P, dtype=qT.dtype)
    rowbase = (ys + ws - 1) * span + xs + ws - 1
    for w in range(nw):
        for h in range(nh):
            q_ = qT[w, h]
            k_ = k[w, h]
            v_ = v[w, h]
            acc = outT[w, h]
            tab = table[h]
            m[:] = -np.inf
            l[:] = 0
            acc[:, :] = 0
            for k0 in range(0, P, block):
                nb = min(k0 + block, P) - k0
                for jj in range(nb):
                    j = k0 + jj
                    srow = S[jj]
                    srow[:] = 0
                    for t in range(d):
                        kt = k_[j, t]
                        qrow = q_[t]
                        for p in range(P):
                            srow[p] += qrow[p] * kt
                    col = ys[j] * span + xs[j]
                    for p in range(P):
                        srow[p] = srow[p] * scale + tab[rowbase[p] - col]
                mn[:] = m
                for jj in range(nb):
                    srow = S[jj]
                    for p in range(P):
                        if srow[p] > mn[p]:
                            mn[p] = srow[p]
                for p in range(P):
                    corr[p] = math.exp(m[p] - mn[p])
                    l[p] *= corr[p]
                for t in range(d):
                    arow = acc[t]
                    for p in range(P):
                        arow[p] *= corr[p]
                for jj in range(nb):
                    srow = S[jj]
                    for p in range(P):
                        e = math.exp(srow[p] - mn[p])
                        srow[p] = e
                        l[p] += e
                    j = k0 + jj
                    for t in range(d):
                        vt = v_[j, t]
                        arow = acc[t]
                        for p in range(P):
                            arow[p] += srow[p] * vt
                m[:] = mn
            for t in range(d):
                arow = acc[t]
                for p in range(P):
                    arow[p] /= l[p]


def _query_chunk(nh, P, B, d):
    """Largest query chunk whose scratch fits within nh*(2PB + 4P)."""
    coef = nh * B + 3 * nh + max(B, nh * d)
    return max(1, min(P, (nh * (2 * P * B + 4 * P)) // coef)), coef


def _tiled_attention_np(q, k, v, table, ys, xs, ws, block, scale, out):
    nw, nh, P, d = q.shape
    span = 2 * ws - 1
    row_y = ys + ws - 1
    row_x = xs + ws - 1
    bq, _ = _query_chunk(nh, P, min(block, P), d)
    for w in range(nw):
        kw_, vw = k[w], v[w]
        for q0 in range(0, P, bq):
            q1 = min(q0 + bq, P)
            qc = q[w, :, q0:q1]
            acc = out[w, :, q0:q1]
            m = np.full((nh, q1 - q0, 1), -np.inf, dtype=out.dtype)
            l = np.zeros((nh, q1 - q0, 1), dtype=out.dtype)
            for k0 in range(0, P, block):
                k1 = min(k0 + block, P)
                s = np.matmul(qc, kw_[:, k0:k1].swapaxes(-1, -2))
                s *= scale
                idx = (row_y[q0:q1, None] - ys[None, k0:k1]) * span + (row_x[q0:q1, None] - xs[None, k0:k1])
                for h in range(nh):
                    s[h] += table[h].take(idx)
                m_new = s.max(axis=-1, keepdims=True)
                np.maximum(m_new, m, out=m_new)
                # m becomes the rescale factor for the old state
                np.subtract(m, m_new, out=m)
                np.exp(m, out=m)
                s -= m_new
                np.exp(s, out=s)
                l *= m
                l += s.sum(axis=-1, keepdims=True)
                acc *= m
                acc += np.matmul(s, vw[:, k0:k1])
                m = m_new
            acc /= l


def tiled_attention(q, k, v, table, ys, xs, ws, block, scale):
    """Streamed softmax(q kᵀ·scale + bias) v over key blocks of size ``block``.

    Returns ``(out, aux_floats, aux_index)`` where the last two are the
    per-window peak scratch counts of the flavour that ran.
    """
    nw, nh, P, d = q.shape
    block = min(block, P)
    if numba_enabled():
        qT = np.ascontiguousarray(q.swapaxes(-1, -2))
        outT = np.empty_like(qT)
        _tiled_attention_nb(qT, np.ascontiguousarray(k), np.ascontiguousarray(v),
                            np.ascontiguousarray(table, dtype=q.dtype), ys, xs, ws, block,
                            q.dtype.type(scale), outT)
        # heads run one after another: a (block, P) score tile plus m, l, m_new, corr
        return np.ascontiguousarray(outT.swapaxes(-1, -2)), block * P + 4 * P, 0
    out = np.zeros_like(q)
    _tiled_attention_np(q, k, v, table.astype(q.dtype, copy=False), ys, xs, ws, block, scale, out)
    B = block
    bq, coef = _query_chunk(nh, P, B, d)
    # scores + m/l/m_new for every head, plus the larger of the bias gather
    # block and the p·v product
    return out, bq * coef, bq * B
