"""Time the compiled and pure-Python theta-scheme marches on random tridiagonal bands.

    python3 benchmarks/bench_march.py --sizes 64 256 1024 --steps 256
"""

import argparse
import timeit

import numpy as np

from heatnull._kernels import backends


def bands(n, N, rng):
    lo = -rng.random((N + 1, n - 1))
    up = lo.copy()
    di = 2.5 + rng.random((N + 1, n))
    return lo, di, up


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--steps", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(impls)}")
    print(f"{'n':>6} {'kernel':>8} " + " ".join(f"{k + ' ms':>12}" for k in impls) + f" {'speedup':>8}")
    for n in args.sizes:
        m = 0.5 + rng.random(n)
        lo, di, up = bands(n, args.steps, rng)
        rhs = rng.normal(size=(args.steps, n))
        y0 = rng.normal(size=n)
        calls = {
            "forward": lambda mod: mod.march_forward(m, lo, di, up, rhs, y0, 0.01, 0.5),
            "adjoint": lambda mod: mod.march_adjoint(m, lo, di, up, rhs, 0.01, 0.5),
        }
        for kernel, call in calls.items():
            ms = {k: 1e3 * min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat))
                  for k, mod in impls.items()}
            sp = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
            print(f"{n:>6} {kernel:>8} " + " ".join(f"{v:>12.3f}" for v in ms.values()) + f" {sp:>8.1f}")


if __name__ == "__main__":
    main()
