"""Compare the compiled and numpy bit kernels on square products.

Usage: python benchmarks/bench_bitcore.py [--sizes 64 256 1024] [--repeats 5]

Prints one line per (kernel, size, backend) with the best wall time over the
repeats, and the speedup of the compiled backend when it is available.
"""

import argparse
import time

import numpy as np

from bibit import bitcore as bc


def best_time(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def operands(n: int, seed: int):
    rng = np.random.default_rng(seed)
    a = bc.pack(rng.choice([-1.0, 1.0], size=(n, n)))
    b = bc.pack(rng.choice([-1.0, 1.0], size=(n, n)))
    w = bc.pack(rng.integers(0, 2, size=(n, n)).astype(np.float64), bc.Encoding.ZERO_ONE)
    return a, b, w


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = bc.available_backends()
    print(f"default backend: {bc.BACKEND}; available: {', '.join(backends)}")
    print(f"{'kernel':<6} {'n':>6} {'backend':<8} {'seconds':>10} {'speedup':>8}")
    for n in args.sizes:
        a, b, w = operands(n, args.seed)
        kernels = {
            "xnor": lambda be: bc.xnor_matmul(a, b, backend=be),
            "bamm": lambda be: bc.bamm(w, b, backend=be),
        }
        for name, fn in kernels.items():
            ref = best_time(lambda: fn("python"), args.repeats)
            print(f"{name:<6} {n:>6} {'python':<8} {ref:>10.5f} {1.0:>8.1f}")
            if "cython" in backends:
                t = best_time(lambda: fn("cython"), args.repeats)
                assert np.array_equal(fn("cython"), fn("python"))
                print(f"{name:<6} {n:>6} {'cython':<8} {t:>10.5f} {ref / t:>8.1f}")


if __name__ == "__main__":
    main()
