"""Compiled (numba) versus pure-numpy kernels.

Times each hot kernel on representative inputs, then whole runs with the
dispatch flag toggled.  Usage::

    python3 benchmarks/bench_backends.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from mohl import _kernels, cases
from mohl.reference import GridConfig, admissible_dt, euler_explicit_run
from mohl.stepper import run_simulation


def best_of(fn, repeat: int, number: int) -> float:
    """Best mean seconds per call over ``repeat`` batches of ``number`` calls."""
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_rows(repeat: int):
    model = cases.multilayer().model
    num, den, pw = model.packed_closures()
    v = np.linspace(0.5, 1.8, 60)
    slots = np.arange(6, dtype=np.intp)
    nodes = np.linspace(0.0, 1.0, 25)
    coeffs = np.random.default_rng(0).standard_normal((2, nodes.size - 1, 4))
    x = np.linspace(0.0, 1.0, 201)
    cases_ = {
        "closure_eval (60 pts)": (
            lambda: _kernels.closure_eval_numba(num[0, 3], den[0, 3], pw[0, 3, 0], pw[0, 3, 1], v),
            lambda: _kernels.closure_eval_numpy(num[0, 3], den[0, 3], pw[0, 3, 0], pw[0, 3, 1], v)),
        "closures_eval (6 slots x 60 pts)": (
            lambda: _kernels.closures_eval_numba(num[0], den[0], pw[0], slots, v),
            lambda: _kernels.closures_eval_numpy(num[0], den[0], pw[0], slots, v)),
        "cubic_eval (201 pts, 24 intervals)": (
            lambda: _kernels.cubic_eval_numba(nodes, coeffs, x, True),
            lambda: _kernels.cubic_eval_numpy(nodes, coeffs, x, True)),
    }
    rows = []
    for name, (compiled, plain) in cases_.items():
        compiled()  # compile outside the timed region
        rows.append((name, best_of(compiled, repeat, 2000), best_of(plain, repeat, 2000)))
    return rows


def timed_run(fn, use_numba: bool) -> float:
    saved = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = use_numba
    try:
        t0 = time.perf_counter()
        res = fn()
        wall = time.perf_counter() - t0
    finally:
        _kernels.USE_NUMBA = saved
    assert res.ok, res.error
    return wall


def run_rows():
    case = cases.single_layer()
    n = GridConfig.from_spacing(1e-2, 1.0, case.model).intervals
    grid = GridConfig(n, admissible_dt(case, n, case.dt_star))
    explicit = lambda: euler_explicit_run(case, grid, output_dt=case.dt_star, tau_star=0.5)  # noqa: E731
    mohl = lambda: run_simulation(case.replace(tau_star=6.0))  # noqa: E731
    explicit_march_warm = euler_explicit_run(case, grid, output_dt=case.dt_star, tau_star=case.dt_star)
    assert explicit_march_warm.ok
    return [
        ("explicit_march (single layer, t* 0.5)", timed_run(explicit, True), timed_run(explicit, False)),
        ("MOHL run (single layer, t* 6)", timed_run(mohl, True), timed_run(mohl, False)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    rows = kernel_rows(args.repeat) + run_rows()
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>12}  {'numpy':>12}  {'speedup':>8}")
    for name, fast, slow in rows:
        print(f"{name:<{width}}  {fast:>11.3e}s  {slow:>11.3e}s  {slow / fast:>7.1f}x")


if __name__ == "__main__":
    main()
