"""Time the compiled and pure-Python kernel backends on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--out bench.tsv]

Each kernel is checked for agreement between backends before it is timed.
"""
import argparse
import sys
import timeit

import numpy as np

from auctionbook import kernels
from auctionbook.io import write_table


def cases(rng):
    n = 1001
    lower = -0.3 * np.ones(n)
    upper = -0.3 * np.ones(n)
    diag = 1.6 * np.ones(n)
    rhs = rng.random(n)
    yield "solve_tridiagonal n=1001", "solve_tridiagonal", (lower, diag, upper, rhs)

    sell = rng.integers(0, 5, 2001) * 100 * (rng.random(2001) < 0.3)
    buy = rng.integers(0, 5, 2001) * 100 * (rng.random(2001) < 0.3)
    yield "clearing_scan levels=2001", "clearing_scan", (sell, buy, 500, 300, 1000)

    X = np.concatenate([np.zeros((500, 1)), np.cumsum(rng.standard_normal((500, 300)), axis=1)], axis=1)
    yield "rescaled_range 500x300", "rescaled_range", (X,)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled backend unavailable; timing the Python backend only", file=sys.stderr)
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))

    rows = []
    print(f"{'kernel':<28}{'backend':<9}{'usec/call':>12}{'speedup':>10}")
    for label, name, inputs in cases(np.random.default_rng(0)):
        ref = getattr(kernels.python_backend, name)(*inputs)
        base = None
        for bname, mod in backends:
            fn = getattr(mod, name)
            np.testing.assert_allclose(np.asarray(fn(*inputs), dtype=float), np.asarray(ref, dtype=float),
                                       rtol=1e-10, atol=1e-12, equal_nan=True)
            number = max(1, args.repeat)
            t = min(timeit.repeat(lambda: fn(*inputs), number=number, repeat=5)) / number * 1e6
            base = base or t
            rows.append((label, bname, t, base / t))
            print(f"{label:<28}{bname:<9}{t:>12.1f}{base / t:>10.2f}")
    if args.out:
        write_table(args.out, ["kernel", "backend", "usec_per_call", "speedup"], list(zip(*rows)))


if __name__ == "__main__":
    main()
