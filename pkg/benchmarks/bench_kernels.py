"""Compare the numba kernels with their pure numpy/Python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both implementations directly in one process. The
end-to-end run times a Monte Carlo simulation in two subprocesses, one with
HIERMODEL_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hiermodel import kernels


def _cases(rng):
    y = rng.normal(size=(2000, 3))
    codes = np.repeat(np.arange(200), 10).astype(np.int64)
    m = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    beta_args = [(rng.uniform(0.5, 40), rng.uniform(0.5, 40), rng.uniform(0.01, 0.99)) for _ in range(200)]
    gamma_args = [(rng.uniform(0.5, 40), rng.uniform(0.05, 60)) for _ in range(200)]
    return {
        "betainc x200": lambda f: [f(*a) for a in beta_args],
        "gammaincc x200": lambda f: [f(*a) for a in gamma_args],
        "lu_det 6x6": lambda f: f(m),
        "cluster_moments 2000x3": lambda f: f(y, codes, 200),
    }


_IMPLS = {
    "betainc x200": "betainc",
    "gammaincc x200": "gammaincc",
    "lu_det 6x6": "lu_det",
    "cluster_moments 2000x3": "cluster_moments",
}

_E2E = (
    "import time; from hiermodel.multilevel import SimulationConfig, simulate;"
    "cfg = SimulationConfig([0.0, 0.0], [[25.0, 5.0], [5.0, 9.0]], [[75.0, 10.0], [10.0, 20.0]], 100, 20, seed=1, replications=500);"
    "simulate(SimulationConfig([0.0], [[1.0]], [[1.0]], 2, 2));"
    "t = time.perf_counter(); simulate(cfg); print(time.perf_counter() - t)"
)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    print(f"{'kernel':<24}{'python ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call in cases.items():
        py = getattr(kernels, f"_{_IMPLS[name]}_py")
        nb = getattr(kernels, f"_{_IMPLS[name]}_nb")
        t_py = min(timeit.repeat(lambda: call(py), number=1, repeat=repeat)) * 1e3
        if nb is None:
            print(f"{name:<24}{t_py:12.3f}{'n/a':>12}{'':>10}")
            continue
        call(nb)  # compile or load from cache
        t_nb = min(timeit.repeat(lambda: call(nb), number=1, repeat=repeat)) * 1e3
        print(f"{name:<24}{t_py:12.3f}{t_nb:12.3f}{t_py / t_nb:9.1f}x")


def bench_end_to_end():
    print("\nsimulate, 500 replications, J=100, n=20, p=2")
    for label, flag in (("numba", "0"), ("python", "1")):
        env = dict(os.environ, HIERMODEL_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True, text=True, check=True)
        print(f"  {label:<8}{float(out.stdout):8.3f} s")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    bench_kernels(args.repeat)
    if args.end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()
