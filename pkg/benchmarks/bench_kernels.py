"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--steps 1000000] [--reps 8]

Reports per-replicate wall time for path simulation and for the fused
simulate-and-reduce kernel used by the Monte Carlo harness, and checks the
two backends agree on the same random streams.
"""
import argparse
import time

import numpy as np

from multiscale_mle import get_model
from multiscale_mle._kernels import _fallback
from multiscale_mle.rng import stream, streams

try:
    from multiscale_mle._kernels import _core
except ImportError:
    _core = None


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="sin-ou-corr")
    ap.add_argument("--steps", type=int, default=1_000_000)
    ap.add_argument("--reps", type=int, default=8, help="replicates for the fused kernel")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _core is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    params = get_model(args.model).family.params()
    n, dt = args.steps, 1.0 / args.steps
    common = (params, 1.0, 1.0, 1.0, 0.1, 1e-3, dt, n)
    idx = list(range(args.reps))

    rows = []
    t_c, a = _best_of(lambda: _core.simulate_family(*common, stream(0), False), args.repeat)
    t_p, b = _best_of(lambda: _fallback.simulate_family(*common, stream(0), False), 1)
    same = np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    rows.append(("simulate_family (1 path)", t_c, t_p, f"bitwise equal: {same}"))

    t_c, a = _best_of(lambda: _core.family_stats(*common, streams(0, idx)), args.repeat)
    t_p, b = _best_of(lambda: _fallback.family_stats(*common, streams(0, idx)), 1)
    dev = float(np.max(np.abs(a - b) / (1 + np.abs(b))))
    rows.append((f"family_stats ({args.reps} paths)", t_c / args.reps, t_p / args.reps, f"max rel dev {dev:.1e}"))

    print(f"model={args.model} steps={n}")
    print(f"{'kernel':<28}{'cython s/path':>14}{'numpy s/path':>14}{'speedup':>9}  check")
    for name, tc, tp, note in rows:
        print(f"{name:<28}{tc:>14.4f}{tp:>14.4f}{tp / tc:>9.1f}  {note}")


if __name__ == "__main__":
    main()
