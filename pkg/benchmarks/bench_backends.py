"""Compare the compiled tape evaluator with the pure-Python fallback.

Two modes are timed: ``point`` evaluates one state at a time (what the
integrators do on every stage) and ``batch`` evaluates many sample points in
one call (what the identity checkers do).

Run with ``python3 benchmarks/bench_backends.py [--points N] [--repeat R]``.
"""
import argparse
import timeit

import numpy as np

from nambu import _backend
from nambu import exprcalc as ec
from nambu.bracket import NambuSystem, hamiltonian_vector_field
from nambu.skewtensor import generalized_E


def workloads(rng, n=6):
    G = ec.parse("x3 + x2*x6 + x1*x4^2 - x5^3/3", n)
    H = ec.parse("(x1^2 + x2^2 + x3^2 + x4^2 + x5^2 + x6^2)/2 + sin(x1*x5)", n)
    X = hamiltonian_vector_field(NambuSystem(n, generalized_E(2, layout="block"), G, H))
    yield "vector field", ec.compile_fields(X.components, n)
    yield "field + Jacobian", X.rhs_with_jacobian_tape()
    yield "20 random exprs", ec.compile_fields([ec.random_expression(n, 5, rng) for _ in range(20)], n)


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = _backend.implementations()
    if "compiled" not in impls:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")
    P = rng.uniform(-1, 1, size=(args.points, 6))
    print(f"{args.points} points, best of {args.repeat}; times in ms")
    print(f"{'workload':<18}{'nodes':>6}{'mode':>7}{'python':>10}{'compiled':>10}{'speedup':>9}")
    for name, tape in workloads(rng):
        ref = tape.eval_batch(P)
        for mod in impls.values():
            got = tape.eval_batch(P, impl=mod)
            assert np.allclose(got, ref, rtol=1e-13, atol=1e-13)
        for mode in ("point", "batch"):
            t = {}
            for key, mod in impls.items():
                if mode == "point":
                    t[key] = best(lambda: [tape.eval(x, impl=mod) for x in P], args.repeat)
                else:
                    t[key] = best(lambda: tape.eval_batch(P, impl=mod), args.repeat)
            print(f"{name:<18}{len(tape):>6}{mode:>7}{t['python']:>10.2f}{t['compiled']:>10.2f}"
                  f"{t['python'] / t['compiled']:>8.1f}x")


if __name__ == "__main__":
    main()
