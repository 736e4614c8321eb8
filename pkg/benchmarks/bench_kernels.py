"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also checks that both backends return identical bytes for every case.
"""
import argparse
import timeit

import numpy as np

from pssrlab import _kernels_py as py

try:
    from pssrlab import _ckernels as native
except ImportError:
    native = None


def cases(rng):
    x = rng.standard_normal((8, 16, 122, 122))
    cols = py.im2col(x, 3, 2)
    left = rng.integers(0, 256, (3, 120, 160)).astype(np.int32)
    right = np.roll(left, -5, axis=2)
    return {
        "im2col 8x16x122x122 k3 s2": lambda m: m.im2col(x, 3, 2),
        "col2im 8x16x122x122 k3 s2": lambda m: m.col2im(cols, x.shape, 3, 2),
        "sad_disparity 3x120x160 w7 d16": lambda m: m.sad_disparity(left, right, 7, 16),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'python ms':>10} {'native ms':>10} {'speedup':>8}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if native is None:
            print(f"{name:<34} {t_py:10.2f} {'n/a':>10} {'':>8}")
            continue
        if fn(py).tobytes() != fn(native).tobytes():
            raise SystemExit(f"backends disagree on {name}")
        t_nat = min(timeit.repeat(lambda: fn(native), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<34} {t_py:10.2f} {t_nat:10.2f} {t_py / t_nat:7.2f}x")


if __name__ == "__main__":
    main()
