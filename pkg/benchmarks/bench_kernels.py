"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one CSV row per case with the best-of-``repeat`` wall time for each
backend and the speedup.  Each case calls a full solver, so the numbers
include the Python glue around the inner loops.
"""

import argparse
import time

import numpy as np

from madbayes import kernels
from madbayes.data_io import SyntheticSpec, synth_linear_gaussian
from madbayes.solvers import (
    SolverConfig,
    bp_means,
    collapsed_bp_means,
    collapsed_dp_means,
    dp_means,
    k_features,
)


def cases():
    X, _, _ = synth_linear_gaussian(SyntheticSpec(400, 5, 5, noise_sigma=0.1, seed=1, mean_scale=2.0))
    Xs = X[:120]
    B = np.random.default_rng(2).normal(size=(600, 3))
    cfg = SolverConfig()
    return [
        ("dpmeans N=600", lambda: dp_means(B, 2.0, cfg, seed=0)),
        ("collapsed-dp N=600", lambda: collapsed_dp_means(B, 2.0, cfg, seed=0)),
        ("bpmeans N=400", lambda: bp_means(X, 1.0, cfg, seed=0)),
        ("collapsed-bp N=120", lambda: collapsed_bp_means(Xs, 1.0, cfg, seed=0)),
        ("kfeatures N=400 K=8", lambda: k_features(X, 8, cfg, seed=0)),
    ]


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        parser.exit(1, "compiled extension is not built; run pip install -e . first\n")
    start = kernels.BACKEND
    print("case,cython_s,python_s,speedup")
    try:
        for name, fn in cases():
            t = {}
            for b in ("cython", "python"):
                kernels.use_backend(b)
                t[b] = best_time(fn, args.repeat)
            print(f"{name},{t['cython']:.4f},{t['python']:.4f},{t['python'] / t['cython']:.1f}")
    finally:
        kernels.use_backend(start)


if __name__ == "__main__":
    main()
