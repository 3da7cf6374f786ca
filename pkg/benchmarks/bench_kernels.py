"""Compiled vs pure-Python kernels: Dinic max-flow and MPLP sweeps.

    python3 benchmarks/bench_kernels.py [--sizes 8 16 32] [--repeats 3]

Both backends are called on identical inputs; results are checked for
agreement before timings are reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from perturbmap import _fallback
from perturbmap.mapsolve import graphcut_network
from perturbmap.model import SpinGlassConfig, gen_spin_glass

try:
    from perturbmap import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(sizes, repeats, mplp_iters):
    rows = []
    for n in sizes:
        att = gen_spin_glass(SpinGlassConfig(n, n, 1.0, 2.0, "attractive", seed=n))
        net = graphcut_network(*att.arrays)
        flow_args = (net.num_nodes, net.tails, net.heads, net.caps, net.source, net.sink, 1e-12)
        mix = gen_spin_glass(SpinGlassConfig(n, n, 1.0, 2.0, "mixed", seed=n))
        un, ends, tabs = mix.arrays
        mplp_args = (un, ends, tabs, np.array(mix.cards, dtype=np.intp), mplp_iters, 0.0)

        for kernel, args in (("maxflow", flow_args), ("mplp", mplp_args)):
            tp, ref = best_time(lambda: getattr(_fallback, kernel)(*args), repeats)
            if _kernels is None:
                rows.append((kernel, n, tp, np.nan))
                continue
            tc, out = best_time(lambda: getattr(_kernels, kernel)(*args), repeats)
            if kernel == "maxflow":
                assert abs(out[0] - ref[0]) <= 1e-9 * max(1.0, ref[0])
                assert np.array_equal(out[1], ref[1])
            else:
                assert np.array_equal(out[0], ref[0])
                assert np.allclose(out[2], ref[2], rtol=0, atol=1e-9)
            rows.append((kernel, n, tp, tc))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--mplp-iters", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"{'kernel':8s} {'grid':>6s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}")
    for kernel, n, tp, tc in bench(args.sizes, args.repeats, args.mplp_iters):
        print(f"{kernel:8s} {n:>3d}x{n:<2d} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
