"""Time the compiled and numpy kernel backends on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from mobcache import kernels
from mobcache.core import ContentCatalog, CostParams
from mobcache.placement import PlacementProblem


def cases(rng):
    def problem(K, M, cap):
        psi = rng.uniform(1, 20, K)
        p = rng.dirichlet(np.ones(M))
        return PlacementProblem.from_densities(ContentCatalog.uniform(M), CostParams(), [cap] * K, psi, p)

    greedy = problem(9, 400, 50)
    oracle = problem(3, 6, 2)
    pts = rng.uniform(0, 100, (2000, 2))
    cents = rng.uniform(0, 100, (16, 2))

    def run_greedy(impl):
        impl.greedy_fill(*greedy.kernel_args(), np.zeros((9, 400), dtype=np.uint8))

    return {
        "greedy_fill K=9 M=400 C=50": run_greedy,
        "exhaustive_search K=3 M=6": lambda impl: impl.exhaustive_search(*oracle.kernel_args()),
        "kmeans_assign n=2000 k=16": lambda impl: impl.kmeans_assign(pts, cents),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description="kernel backend benchmark")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = {"python": kernels.backend("python")}
    try:
        impls["cython"] = kernels.backend("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
    print(f"{'kernel':<30}" + "".join(f"{name + ' ms':>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases(np.random.default_rng(0)).items():
        ms = {name: 1e3 * min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
              for name, impl in impls.items()}
        speed = f"{ms['python'] / ms['cython']:>9.1f}x" if "cython" in ms else ""
        print(f"{label:<30}" + "".join(f"{v:>14.2f}" for v in ms.values()) + speed)


if __name__ == "__main__":
    main()
