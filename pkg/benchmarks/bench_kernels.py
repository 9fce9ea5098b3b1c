"""Compare the compiled Euler kernel against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``.  Both backends produce
bitwise-identical ensembles, which is checked before timings are reported.
"""
import argparse
import time

import numpy as np

from subgeo import models
from subgeo import simulate as S


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    if S.BACKEND != "compiled":
        raise SystemExit("compiled kernel not available; build the extension first")
    dt = 1e-3
    T = args.steps * dt
    cases = {
        "ou": models.ou(),
        "quadratic": models.power_drift(2.0),
        "cosine": models.cosine_drift(1.0),
        "ou_2d": models.ou(dim=2),
    }
    print(f"{'model':<10} {'mode':<8} {'compiled s':>11} {'python s':>10} {'speed-up':>9}")
    for name, m in cases.items():
        d = m.dim
        for mode in ("single", "coupled"):
            def run(backend):
                if mode == "single":
                    return S.euler_maruyama(m, np.ones(d), T, dt, args.paths, seed=0, record_every=args.steps,
                                            workers=args.workers, backend=backend)
                return S.synchronous_pair(m, np.ones(d), -np.ones(d), T, dt, args.paths, seed=0,
                                          record_every=args.steps, workers=args.workers, backend=backend)

            tc, a = best_of(lambda: run("compiled"), args.repeats)
            tp, b = best_of(lambda: run("python"), args.repeats)
            if not np.array_equal(a.states, b.states):
                raise SystemExit(f"{name}/{mode}: backends disagree")
            print(f"{name:<10} {mode:<8} {tc:>11.3f} {tp:>10.3f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
