"""Time the numba and numpy implementations of the hot kernels.

    python benchmarks/bench_kernels.py [--dims 16 64 256] [--repeat 5]

Each kernel is called once per backend before timing so numba compilation
is excluded.  Results are also checked for agreement.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from macrostate import kernels


def _case(d, rng, n_ops=8, n_nodes=64):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    a = (a + a.conj().T) / 2
    b = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    b = (b + b.conj().T) / 2
    c = np.sort(rng.normal(size=d))
    energies = np.sort(rng.normal(size=d)) * 3
    ops = np.array([(x + x.conj().T) / 2 for x in rng.normal(size=(n_ops, d, d)) + 0j])
    nodes = np.array([(x + x.conj().T) / 2 for x in rng.normal(size=(n_nodes, d, d)) + 0j])
    lags = np.linspace(0.0, 2.0, n_nodes)
    weights = np.full(n_nodes, 2.0 / n_nodes)
    w = kernels.np_divided_difference_weights(c)
    return {
        "divided_difference_weights": (c,),
        "kubo_pair_sum": (a, b, w),
        "kubo_gram": (ops, w),
        "heisenberg_phase": (a, energies, 0.7),
        "phase_accumulate": (nodes, energies, lags, weights),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", type=int, nargs="+", default=[16, 64, 256])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    impls = {"numpy": kernels.implementations("numpy")}
    if kernels.HAVE_NUMBA:
        impls["numba"] = kernels.implementations("numba")
    else:
        print("numba not installed; timing the numpy path only")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<28s} {'dim':>5s} " + " ".join(f"{b + ' [ms]':>12s}" for b in impls) + f" {'speedup':>8s} {'max|diff|':>10s}")
    for d in args.dims:
        case = _case(d, rng)
        for name, call_args in case.items():
            times, outs = {}, {}
            for backend, fns in impls.items():
                fn = fns[name]
                outs[backend] = fn(*call_args)  # warm-up / compile
                n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*call_args), number=1), 1e-6)))
                best = min(timeit.repeat(lambda: fn(*call_args), number=n, repeat=args.repeat)) / n
                times[backend] = best * 1e3
            diff = 0.0
            if len(outs) == 2:
                diff = float(np.max(np.abs(np.asarray(outs["numpy"]) - np.asarray(outs["numba"]))))
            speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
            cols = " ".join(f"{times[b]:12.4f}" for b in impls)
            print(f"{name:<28s} {d:5d} {cols} {speed:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
