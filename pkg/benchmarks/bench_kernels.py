"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat N] [--quick]

Each row times the same call under both backends and reports the largest
difference between their results.  For the window integration that is the
final state; for the solver it is the residual after a fixed sweep budget,
where unconverged runs can drift apart in the optimizer's line searches.
"""
import argparse
import time

import numpy as np

from collapse_lab import kernels
from collapse_lab.basis_solver import (
    PreferredBasis,
    SolverOptions,
    random_unitary,
    solve_preferred_basis,
)
from collapse_lab.dynamics import CollapseTarget, integrate_window
from collapse_lab.hilbert import OperatorMatrix, StateVector
from collapse_lab.window import CollapseWindow


def _system(rng, dims):
    n = int(np.prod(dims))
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = OperatorMatrix.from_matrix(dims, 0.5 * (a + a.conj().T))
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return H, StateVector.from_amps(dims, v / np.linalg.norm(v))


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def window_case(dims, repeat, rng):
    H, psi = _system(rng, dims)
    tg = CollapseTarget(0, PreferredBasis(0, random_unitary(rng, dims[0])), 0)
    w = CollapseWindow()
    res = {}
    for be in kernels.available_backends():
        res[be] = _best(lambda: integrate_window(H, psi, w, [tg], backend=be), repeat)
    diff = 0.0
    if len(res) == 2:
        diff = float(np.max(np.abs(res["compiled"][1].final.amps - res["python"][1].final.amps)))
    steps = next(iter(res.values()))[1].n_steps
    return f"integrate_window dims={dims} ({steps} steps)", res, diff


def solver_case(dims, repeat, rng):
    H, psi = _system(rng, dims)
    res = {}
    for be in kernels.available_backends():
        opts = SolverOptions(n_random=2, use_mean_field=False, max_sweeps=10, backend=be)
        res[be] = _best(lambda: solve_preferred_basis(H, psi, 0, opts), repeat)
    diff = 0.0
    if len(res) == 2:
        diff = abs(res["compiled"][1].residual - res["python"][1].residual)
    return f"solve_preferred_basis dims={dims}", res, diff


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small sizes only")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(2024)
    cases = [(window_case, (2, 2)), (window_case, (4, 4)), (solver_case, (2, 3))]
    if not args.quick:
        cases += [(window_case, (8, 8)), (solver_case, (3, 4))]
    print(f"backends: {', '.join(kernels.available_backends())}")
    print(f"{'case':<44} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} {'max diff':>10}")
    for fn, dims in cases:
        name, res, diff = fn(dims, args.repeat, rng)
        tp = res["python"][0]
        tc = res["compiled"][0] if "compiled" in res else float("nan")
        print(f"{name:<44} {tp:>11.4f} {tc:>13.4f} {tp / tc:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
