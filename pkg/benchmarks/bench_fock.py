"""Compare the compiled Fock kernels with the numpy reference.

    python3 benchmarks/bench_fock.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from beclab import _fock_py
from beclab.fock import FockSector

try:
    from beclab import _fock_ext
except ImportError:
    _fock_ext = None

CASES = [(6, 8), (9, 6), (10, 8), (12, 7)]  # (modes, particles)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _fock_ext is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    print(f"{'d':>3} {'N':>3} {'dim':>7} {'kernel':<12} {'numpy s':>9} {'compiled s':>10} {'speedup':>8}")
    for d, N in CASES:
        ref = FockSector(d, N, kernels=_fock_py)
        states, B = ref.states, ref._binom
        for name, call in [
            ("enumerate", lambda k: k.enumerate_states(N, d)),
            ("rank", lambda k: k.rank_states(states, N, B)),
            ("pair", lambda k: k.annihilation_triplets(states, N, 2, B)),
        ]:
            a, b = call(_fock_py), call(_fock_ext)
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
            if not same:
                raise SystemExit(f"kernel mismatch in {name} for d={d}, N={N}")
            tp = best_of(lambda: call(_fock_py), args.repeat)
            tc = best_of(lambda: call(_fock_ext), args.repeat)
            print(f"{d:>3} {N:>3} {ref.dim:>7} {name:<12} {tp:>9.4f} {tc:>10.4f} {tp / tc:>8.1f}")


if __name__ == "__main__":
    main()
