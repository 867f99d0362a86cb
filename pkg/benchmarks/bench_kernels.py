"""Wall-time comparison of the numba and pure-numpy flavours of the hot kernels.

    python benchmarks/bench_kernels.py [--repeats 5] [--output kernels.csv]

Both flavours run in one process via ``escsr._accel.use_numba``; the first
call of each configuration is a discarded warm-up (numba compilation).
"""
import argparse
import csv
import sys
import time

import numpy as np

from escsr import _accel
from escsr.attention import attention_tiled
from escsr.tensor_ops import ConvKernel, conv2d


def best_of(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for c, hw, k in ((16, 64, 13), (96, 64, 3), (16, 128, 13)):
        x = rng.standard_normal((1, c, hw, hw)).astype(np.float32)
        w = ConvKernel(rng.standard_normal((c, 1, k, k)).astype(np.float32), groups=c)
        yield f"depthwise c={c} {hw}x{hw} k={k}", lambda x=x, w=w, k=k: conv2d(x, w, padding=k // 2)
    for ws, heads, block in ((16, 4, 1), (16, 4, 64), (32, 4, 7), (32, 4, 64), (32, 4, 256)):
        P = ws * ws
        q, kk, v = (rng.standard_normal((4, heads, P, 16)).astype(np.float32) for _ in range(3))
        t = rng.standard_normal((heads, (2 * ws - 1) ** 2)).astype(np.float32)
        yield (f"tiled attention ws={ws} heads={heads} block={block} windows=4",
               lambda q=q, kk=kk, v=v, t=t, ws=ws, block=block: attention_tiled(q, kk, v, t, ws, block))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--output")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy flavour can run", file=sys.stderr)
    rows = []
    for name, fn in cases(np.random.default_rng(0)):
        with _accel.use_numba(False):
            t_np = best_of(fn, args.repeats)
        t_nb = float("nan")
        if _accel.HAVE_NUMBA:
            with _accel.use_numba(True):
                t_nb = best_of(fn, args.repeats)
        rows.append((name, t_nb, t_np, t_np / t_nb))
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.writer(out)
    w.writerow(["case", "numba_seconds", "numpy_seconds", "numpy_over_numba"])
    for name, a, b, r in rows:
        w.writerow([name, f"{a:.5f}", f"{b:.5f}", f"{r:.2f}"])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
