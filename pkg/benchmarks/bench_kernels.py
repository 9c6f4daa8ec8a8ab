"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--nodes 1000 4000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from dsgrl import kernels
from dsgrl.graph import generate_sbm


def cases(n, dim, seed=0):
    blocks = [n // 4] * 4
    g = generate_sbm(blocks, p_in=min(1.0, 40.0 / n), p_out=2.0 / n, seed=seed)
    adj = g.adjacency
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((adj.shape[0], dim))
    h = rng.standard_normal((adj.shape[0], 16))
    args = (adj.indptr, adj.indices, adj.data)
    return {
        "spmm": lambda be: be.spmm(*args, x),
        "spmm_t": lambda be: be.spmm_t(*args, x, adj.shape[1]),
        "sddmm": lambda be: be.sddmm(adj.indptr, adj.indices, x, x),
        "threshold_support": lambda be: be.threshold_support(h),
        "degree_profile": lambda be: be.degree_profile(adj.indptr, adj.indices),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, nargs="+", default=[1000, 4000])
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled extension not built; only the python backend is available")
    backends = {name: kernels.get_backend(name) for name in names}
    header = f"{'kernel':<18} {'nodes':>6} " + " ".join(f"{b + ' ms':>12}" for b in names)
    if len(names) == 2:
        header += f" {'speedup':>8}"
    print(header)
    for n in args.nodes:
        for name, fn in cases(n, args.dim).items():
            ms = {}
            for b, mod in backends.items():
                fn(mod)  # warm-up
                best = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
                ms[b] = 1e3 * best
            row = f"{name:<18} {n:>6} " + " ".join(f"{ms[b]:>12.3f}" for b in names)
            if len(names) == 2:
                row += f" {ms['python'] / ms['cython']:>7.1f}x"
            print(row)


if __name__ == "__main__":
    main()
