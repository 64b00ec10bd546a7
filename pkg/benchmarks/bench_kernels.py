"""Compare the compiled and pure-Python replay kernels.

    python3 benchmarks/bench_kernels.py --events 200000 --capacity 20
"""

import argparse
import time

import numpy as np

from mtecache.simulator import kernels


def zipf_sequence(n_events, n_contents, exponent, seed):
    rng = np.random.default_rng(seed)
    w = np.arange(1, n_contents + 1, dtype=np.float64) ** -exponent
    return rng.choice(n_contents, size=n_events, p=w / w.sum()).astype(np.int64)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--contents", type=int, default=200)
    ap.add_argument("--capacity", type=int, default=20)
    ap.add_argument("--exponent", type=float, default=0.8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    seq = zipf_sequence(args.events, args.contents, args.exponent, seed=0)
    if kernels.BACKEND != "cython":
        print("compiled kernels not built; run `python3 setup.py build_ext --inplace` first")
    print(f"{'policy':<6} {'backend':<8} {'seconds':>9} {'Mreq/s':>8} {'hit_ratio':>9}")
    for policy, fn in kernels.POLICIES.items():
        results = {}
        for backend in ("python", "cython"):
            if backend == "cython" and kernels.BACKEND != "cython":
                continue
            secs, hits = best_of(lambda: fn(seq, args.capacity, backend=backend), args.repeat)
            results[backend] = (secs, hits)
            print(f"{policy:<6} {backend:<8} {secs:9.4f} {args.events / secs / 1e6:8.2f} {hits.mean():9.4f}")
        if len(results) == 2:
            same = np.array_equal(results["python"][1], results["cython"][1])
            print(f"{policy:<6} speedup {results['python'][0] / results['cython'][0]:.1f}x, identical={same}")


if __name__ == "__main__":
    main()
