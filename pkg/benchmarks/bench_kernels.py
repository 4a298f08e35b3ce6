"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--out bench.csv]

Each kernel runs on inputs sized like one desk-phantom episode.  Both
backends must agree before their timings are reported.
"""
import argparse
import csv
import sys
import time

import numpy as np

from rltrack import kernels


def cases(rng):
    data = rng.normal(size=(24, 21, 3, 28)).astype(np.float32)
    vox = rng.uniform(-1, [24, 21, 3], size=(7 * 4096, 3))
    pts = np.cumsum(rng.normal(scale=0.25, size=(20000, 3)), axis=0) % [24, 21, 3]
    offsets = np.arange(0, 20001, 100)
    n = 200_000
    r = rng.normal(size=n)
    dones = rng.random(n) < 0.02
    dones[-1] = True
    v, nv = rng.normal(size=n), rng.normal(size=n)
    term = dones & (rng.random(n) < 0.5)
    boot = np.where(dones & ~term, nv, 0.0)
    return {
        "trilinear": lambda b: kernels.trilinear(data, vox, backend=b),
        "rasterize": lambda b: kernels.rasterize(pts, offsets, (24, 21, 3), backend=b),
        "discounted": lambda b: kernels.discounted(r, dones, boot, 0.9, backend=b),
        "gae": lambda b: kernels.gae(r, v, nv, term, dones, 0.9, 0.95, backend=b),
    }


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--out", help="optional CSV path")
    args = p.parse_args(argv)
    try:
        kernels.backend_module("cython")
    except RuntimeError:
        print("compiled kernels not built; only the python backend is available", file=sys.stderr)
        return 1
    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        a, b = fn("cython"), fn("python")
        if not np.allclose(a, b, rtol=1e-6, atol=1e-6):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        tc = best_time(lambda: fn("cython"), args.repeat)
        tp = best_time(lambda: fn("python"), args.repeat)
        rows.append((name, tc, tp, tp / tc))
    print(f"{'kernel':<12}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, tc, tp, s in rows:
        print(f"{name:<12}{tc * 1e3:>12.2f}{tp * 1e3:>12.2f}{s:>9.1f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "cython_s", "python_s", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
