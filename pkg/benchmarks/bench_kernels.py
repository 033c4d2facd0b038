"""Compare the compiled core against the pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 3]

Each kernel is run on identical inputs under both backends; outputs are
checked for agreement before timings are reported.
"""
import argparse
import time

import numpy as np

from penaltyopt import _backend, _core_py
from penaltyopt.harness import gen_constraints
from penaltyopt.objectives import logreg, random_quadratic, synthetic_binary_dataset
from penaltyopt.sets import pack_sets


def _best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(seed=0):
    d = 50
    rng = np.random.default_rng(seed)
    sets = gen_constraints(seed, 40, d, rng.standard_normal(d))
    pk = pack_sets(sets)
    quad = random_quadratic(d, 1.0, 10.0, seed)
    data = synthetic_binary_dataset(n=500, d=d, density=0.2, seed=seed)
    logit = logreg(data, 1.0 / data.n)
    K = 20000
    i_idx = rng.integers(data.n, size=K).astype(np.intp)
    j_idx = rng.integers(pk.m, size=K).astype(np.intp)
    x0 = rng.standard_normal(d) * 3

    def sgd(core, obj):
        kind, M, v, reg = obj.kernel_spec()
        M = np.ascontiguousarray(M, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        ii = i_idx if kind == 1 else np.zeros(K, dtype=np.intp)

        def run():
            x = x0.copy()
            core.sgd_chunk(kind, M, v, float(reg), pk.kinds, pk.P, pk.Q, pk.s, x,
                           100.0 * obj.L, 2.0 / obj.mu, obj.L_max, 0, ii, j_idx)
            return x

        return run

    def dykstra(core):
        def run():
            q = np.zeros_like(pk.P)
            return core.dykstra_packed(pk.kinds, pk.P, pk.Q, pk.s, x0, q, 1e-8, 100000)[0]

        return run

    return {
        "sgd_chunk/quadratic (20k steps)": lambda core: sgd(core, quad),
        "sgd_chunk/logistic (20k steps)": lambda core: sgd(core, logit),
        "dykstra_packed (m=40, d=50)": dykstra,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    try:
        from penaltyopt import _core as compiled
    except ImportError:
        print("compiled core not built; nothing to compare")
        return 1
    print(f"active backend: {_backend.name}")
    print(f"{'kernel':<34} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    for name, make in _cases().items():
        t_py, out_py = _best_time(make(_core_py), args.repeat)
        t_c, out_c = _best_time(make(compiled), args.repeat)
        if not np.allclose(out_py, out_c, rtol=1e-9, atol=1e-9):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<34} {t_py:>10.4f} {t_c:>11.4f} {t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
