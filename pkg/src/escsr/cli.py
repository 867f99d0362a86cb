"""Command line entry point: ``escsr <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .attention import attention_naive, attention_tiled
from .io import load_image, load_run_config, load_weights, save_gray, save_image, save_weights
from .metrics import inter_layer_similarity, perturbation_attribution, psnr_y, ssim_y
from .network import (FLOP_TARGETS_G, PARAM_TARGETS_K, ForwardProbe, build_random_weights, count_flops,
                      count_params, esc_forward, flop_breakdown)

log = logging.getLogger("escsr")


def _model_cfg(args):
    rc = load_run_config(args.config)
    if getattr(args, "scale", None):
        rc.scale = args.scale
    if getattr(args, "backend", None):
        rc.backend = args.backend
    if getattr(args, "block", None):
        rc.block_size = args.block
    return rc, rc.model_config()


def cmd_infer(args):
    _, cfg = _model_cfg(args)
    weights = load_weights(args.weights, cfg)
    img = load_image(args.input)
    t0 = time.perf_counter()
    out = esc_forward(img, weights, cfg)
    log.info("forward %s -> %s in %.2fs", img.shape, out.shape, time.perf_counter() - t0)
    save_image(out, args.output)
    return 0


def cmd_verify(args):
    from .verify import run_all

    results = run_all(args.seeds)
    width = max(len(r[0]) for r in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name.ljust(width)}  {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_bench(args):
    rng = np.random.default_rng(0)
    ws, heads, P = args.window_size, args.heads, args.window_size ** 2
    q, k, v = (rng.standard_normal((args.windows, heads, P, args.head_dim)).astype(np.float32) for _ in range(3))
    table = rng.standard_normal((heads, (2 * ws - 1) ** 2)).astype(np.float32)

    def timed(fn):
        fn()  # warm-up (numba compile)
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            _, wsp = fn()
            best = min(best, time.perf_counter() - t0)
        return best, wsp

    rows = [("naive", "numpy") + timed(lambda: attention_naive(q, k, v, table, ws))]
    kernels = ["numba", "numpy"] if _accel.HAVE_NUMBA else ["numpy"]
    for kern in kernels:
        with _accel.use_numba(kern == "numba"):
            rows.append(("tiled", kern) + timed(lambda: attention_tiled(q, k, v, table, ws, args.block)))
    naive_mem = rows[0][3].aux_floats_peak
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["impl", "kernel", "window_size", "block", "heads", "head_dim", "windows", "seconds",
                    "aux_floats_peak", "naive_over_impl"])
        for impl, kern, secs, wsp in rows:
            w.writerow([impl, kern, ws, args.block if impl == "tiled" else P, heads, args.head_dim, args.windows,
                        f"{secs:.6f}", wsp.aux_floats_peak, f"{naive_mem / wsp.aux_floats_peak:.2f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_count(args):
    rc, cfg = _model_cfg(args)
    r = cfg.r
    h = args.height or 720 // r
    w = args.width or 1280 // r
    n_params = count_params(cfg)
    macs = count_flops(cfg, h, w)
    print(f"config: {cfg.variant} x{r}  C={cfg.C} N={cfg.N} M={cfg.M} ws={cfg.ws} heads={cfg.heads} "
          f"ffn_expand={cfg.ffn_expand} h={cfg.h}")
    tp = PARAM_TARGETS_K.get((cfg.variant, r))
    line = f"params: {n_params} ({n_params / 1e3:.1f}K)"
    if tp:
        line += f"  target {tp}K  deviation {100 * (n_params / 1e3 / tp - 1):+.2f}%"
    print(line)
    tf = FLOP_TARGETS_G.get((cfg.variant, r))
    line = f"flops (1 MAC = 1 FLOP) @ {w}x{h}: {macs / 1e9:.2f}G"
    if tf and (h, w) == (720 // r, 1280 // r):
        line += f"  target {tf}G  deviation {100 * (macs / 1e9 / tf - 1):+.2f}%"
    print(line)
    for part, val in flop_breakdown(cfg, h, w).items():
        print(f"  {part:<11} {val / 1e9:9.3f}G")
    return 0


def cmd_analyze(args):
    _, cfg = _model_cfg(args)
    weights = load_weights(args.weights, cfg)
    img = load_image(args.input)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode in ("cka", "cosine"):
        probe = ForwardProbe(trace=[])
        esc_forward(img, weights, cfg, probe)
        sim = inter_layer_similarity(probe.trace, args.mode)
        names = [n for n, _ in probe.trace]
        with open(out_dir / f"{args.mode}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer"] + names)
            for n, row in zip(names, sim):
                w.writerow([n] + [f"{v:.6f}" for v in row])
        save_gray(sim, out_dir / f"{args.mode}.png")
        off = sim[~np.eye(len(sim), dtype=bool)]
        print(f"{len(names)} layers, mean off-diagonal {args.mode} {off.mean():.4f}")
        return 0
    # attribution
    ti, tj = args.target if args.target else (img.shape[2] * cfg.r // 2, img.shape[3] * cfg.r // 2)
    amap = perturbation_attribution(lambda x: esc_forward(x, weights, cfg), img, (ti, tj), eps=args.eps,
                                    batch=args.batch)
    with open(out_dir / "attribution.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([[f"{v:.8g}" for v in row] for row in amap.values])
    save_gray(amap.values, out_dir / "attribution.png")
    print(f"target ({ti}, {tj})  diffusion index {amap.di:.3f}")
    return 0


def cmd_metrics(args):
    sr, hr = load_image(args.sr), load_image(args.hr)
    p = psnr_y(sr, hr, args.scale)
    s = ssim_y(sr, hr, args.scale)
    print(f"PSNR={'inf' if p == float('inf') else f'{p:.4f}'} SSIM={s:.4f}")
    return 0


def cmd_init_random(args):
    rc, cfg = _model_cfg(args)
    seed = rc.seed if args.seed is None else args.seed
    save_weights(build_random_weights(cfg, seed), args.output)
    print(f"wrote {count_params(cfg)} parameters to {args.output}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="escsr", description="ESC super-resolution inference and analysis")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def config_args(p, required=True):
        p.add_argument("--config", required=required, default="esc",
                       help="key=value config file or variant name (esc, esc-light, esc-fp)")
        p.add_argument("--scale", type=int, choices=(2, 3, 4))

    p = sub.add_parser("infer", help="super-resolve an image")
    config_args(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--backend", choices=("naive", "tiled"))
    p.add_argument("--block", type=int)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("verify", help="run the oracle-equivalence checks")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="naive vs tiled attention: time and scratch memory (CSV)")
    p.add_argument("--window-size", type=int, default=32)
    p.add_argument("--block", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--windows", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("count", help="parameter and FLOP report against reference targets")
    config_args(p)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("analyze", help="layer similarity or attribution maps")
    config_args(p, required=False)
    p.add_argument("--mode", required=True, choices=("cka", "cosine", "attribution"))
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", default=".")
    p.add_argument("--target", type=int, nargs=2, metavar=("ROW", "COL"))
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("metrics", help="Y-channel PSNR / SSIM")
    p.add_argument("--sr", required=True)
    p.add_argument("--hr", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("init-random", help="write a seeded random weight file")
    config_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_init_random)
    return ap


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"escsr {args.command}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
