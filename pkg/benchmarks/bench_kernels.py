"""Time the compiled enumeration kernel against the pure-Python one.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from iclsim.kernels import _pykernels

try:
    from iclsim.kernels import _ckernels
except ImportError:
    _ckernels = None


def instance(n, k, seed=0):
    rng = np.random.default_rng(seed)
    offsets = np.arange(n + 1, dtype=np.int64) * k
    values = rng.normal(size=n * k)
    probs = np.tile(np.full(k, 1.0 / k), n)
    weights = rng.uniform(0.5, 2.0, size=n)
    q = rng.uniform(0.1, 0.9, size=n)
    return q, weights, values, probs, offsets, 0.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'n':>3} {'k':>3} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for n, k in [(4, 2), (6, 2), (8, 2), (6, 3), (8, 3), (10, 2)]:
        a = instance(n, k)
        py = min(timeit.repeat(lambda: _pykernels.expected_quadratic_gain(*a), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{n:>3} {k:>3} {py * 1e3:>12.2f} {'n/a':>12} {'n/a':>8}")
            continue
        cy = min(timeit.repeat(lambda: _ckernels.expected_quadratic_gain(*a), number=1, repeat=args.repeat))
        assert np.allclose(_ckernels.expected_quadratic_gain(*a), _pykernels.expected_quadratic_gain(*a),
                           rtol=1e-12, atol=1e-15)
        print(f"{n:>3} {k:>3} {py * 1e3:>12.2f} {cy * 1e3:>12.3f} {py / cy:>7.0f}x")


if __name__ == "__main__":
    main()
