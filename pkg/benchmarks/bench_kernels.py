"""Time the numba and numpy kernel paths on identical inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from thinflow import _kernels as K


def cases(rng):
    s = rng.standard_normal((3, 4 * 128 * 128))
    m = 1024
    lower, upper = -np.ones(m), -np.ones(m)
    diag = 2.0 + rng.random(m)
    rhs = rng.standard_normal(m)
    u, v = rng.standard_normal((2, 64, 64))
    return {
        "constitutive (65k points, with Hessian)": lambda impl: impl.constitutive(s, 1.5, 1e-6, True),
        "tridiag (m=1024)": lambda impl: impl.tridiag(lower, diag, upper, rhs),
        "periodic_energy (64x64)": lambda impl: impl.periodic_energy(u, v, 1 / 64, 1.5, 1e-6, 1.0, 0.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    impls = [K.numpy_impl] + ([K.numba_impl] if K.numba_impl is not None else [])
    print(f"{'kernel':42s}" + "".join(f"{i.name:>14s}" for i in impls) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = []
        for impl in impls:
            fn(impl)  # compile / warm up
            times.append(min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)))
        row = f"{label:42s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
