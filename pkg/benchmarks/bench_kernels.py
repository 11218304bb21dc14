"""Compare the compiled hot kernels against the pure-numpy twin.

Usage:  python3 benchmarks/bench_kernels.py [--repeat 200]

Times the three operations that dominate every search: flow propagation,
propagation with the variational equations, and a full segment shoot.
"""

import argparse
import os
import time

import numpy as np

import brokenorbits as bo
from brokenorbits import kernels


def timed(fn, repeat):
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench(model, label, repeat):
    z0 = np.array([0.3, 0.9, 0.4, -0.5])
    q0 = z0[0:2]
    d = np.array([0.25, -0.1])
    cases = {
        "propagate": lambda: kernels.propagate(model, z0, 1.0),
        "propagate+stm": lambda: kernels.propagate(model, z0, 1.0,
                                                   want_stm=True),
        "shoot_fixed": lambda: kernels.shoot_fixed(model, q0, q0 + d, 0.3,
                                                   d / 0.3),
    }
    print(f"\n{label} (backend availability: compiled={kernels.HAVE_COMPILED})")
    for name, fn in cases.items():
        t_compiled = timed(fn, repeat) if kernels.HAVE_COMPILED else float("nan")
        os.environ["BROKENORBITS_FORCE_PURE"] = "1"
        try:
            t_pure = timed(fn, max(3, repeat // 40))
        finally:
            del os.environ["BROKENORBITS_FORCE_PURE"]
        ratio = t_pure / t_compiled if kernels.HAVE_COMPILED else float("nan")
        print(f"  {name:<15} compiled {1e6 * t_compiled:9.1f} us   "
              f"pure {1e6 * t_pure:9.1f} us   speedup x{ratio:6.1f}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    bench(bo.standard_magnetic_fixture(2.0), "magnetic fixture", args.repeat)
    bench(bo.counterexample_model(), "two-rotator fixture", args.repeat)


if __name__ == "__main__":
    main()
