"""Compare the compiled and pure-Python kernels on the same workloads.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from jsslab import kernels
from jsslab.instance import generate_instance, sample_scenario

WORKLOADS = [(4, 4, 0), (5, 5, 0), (6, 6, 0), (5, 10, 0), (8, 8, 0)]
NODE_BUDGET = 200_000


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = {"python": kernels.python_backend}
    if kernels.cython_backend is not None:
        backends["cython"] = kernels.cython_backend
    else:
        print("compiled extension not built; timing the Python kernels only")

    print(f"{'kernel':14s} {'size':>6s} " + " ".join(f"{b:>11s}" for b in backends) + "   speedup  result")
    for n_j, n_m, n_b in WORKLOADS:
        sc = sample_scenario(generate_instance(n_j, n_m, n_b, 1), 0)
        res = {b: best_of(lambda m=m: m.bnb_solve(sc.machines, sc.times, n_m, NODE_BUDGET), args.repeat)
               for b, m in backends.items()}
        _report("bnb_solve", f"{n_j}x{n_m}", res)

        rng = np.random.default_rng(0)
        orders = [rng.permutation(np.repeat(np.arange(n_j), n_m)).tolist() for _ in range(2000)]
        res = {b: best_of(lambda m=m: [m.simulate_order(sc.machines, sc.times, n_m, o) for o in orders],
                          args.repeat) for b, m in backends.items()}
        _report("simulate x2000", f"{n_j}x{n_m}", res)


def _report(kernel, size, res):
    outs = [o for _, o in res.values()]
    agree = all(o == outs[0] for o in outs)
    t = {b: s for b, (s, _) in res.items()}
    speed = f"{t['python'] / t['cython']:8.1f}x" if "cython" in t else "       -"
    first = outs[0] if kernel.startswith("bnb") else "-"
    print(f"{kernel:14s} {size:>6s} " + " ".join(f"{v * 1e3:9.2f}ms" for v in t.values())
          + f"  {speed}  {first}{'' if agree else '  MISMATCH'}")


if __name__ == "__main__":
    main()
