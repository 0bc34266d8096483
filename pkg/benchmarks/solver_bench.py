"""Compare the compiled and pure-Python Sudoku search kernels.

Run from the repository root:

    python3 benchmarks/solver_bench.py [--repeats 3]

Three workloads, each timed against both kernels on identical inputs:

  count-288     full enumeration of the empty 4x4 board (288 completions)
  dig-4x4       puzzle generation at box size 2 (the digging loop calls the
                solver once per removal attempt with limit=2)
  solve-9x9     first-solution search on generated 28-clue 9x9 puzzles

The pure kernel is the portability fallback; this script documents what the
Cython extension actually buys on this machine.
"""

from __future__ import annotations

import argparse
import random
import time

from lrt.sudoku import Grid, generate_puzzle, random_solved_grid

from lrt import _solver_py

try:
    from lrt import _solver_core
except ImportError:
    _solver_core = None

KERNELS = [("pure", _solver_py)]
if _solver_core is not None:
    KERNELS.insert(0, ("compiled", _solver_core))


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workload_count_288(kernel):
    empty = [0] * 16
    count, _ = kernel.search(empty, 2, limit=10_000, collect=False)
    assert count == 288


def make_dig_inputs(seed=11, count=30):
    return [random_solved_grid(random.Random(seed + i), 2)
            for i in range(count)]


def workload_dig(kernel, solved_grids):
    # Mirrors generate_puzzle's inner loop: knock out one cell at a time and
    # re-check uniqueness with limit=2.
    for grid in solved_grids:
        cells = list(grid.cells)
        order = random.Random(99).sample(range(16), 16)
        for idx in order:
            saved, cells[idx] = cells[idx], 0
            count, _ = kernel.search(cells, 2, limit=2, collect=False)
            if count != 1:
                cells[idx] = saved


def make_9x9_inputs(seed=5, count=8):
    return [generate_puzzle(seed + i, 3, 28).puzzle for i in range(count)]


def workload_solve_9x9(kernel, puzzles):
    for puzzle in puzzles:
        count, sols = kernel.search(list(puzzle.cells), 3, limit=1)
        assert count == 1 and len(sols) == 1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3,
                    help="keep the best of this many timings")
    args = ap.parse_args()

    dig_inputs = make_dig_inputs()
    nine_inputs = make_9x9_inputs()
    workloads = [
        ("count-288", lambda k: workload_count_288(k)),
        ("dig-4x4", lambda k: workload_dig(k, dig_inputs)),
        ("solve-9x9", lambda k: workload_solve_9x9(k, nine_inputs)),
    ]

    names = [name for name, _ in KERNELS]
    if "compiled" not in names:
        print("note: compiled kernel unavailable, timing pure only")

    results = {}
    for wname, fn in workloads:
        for kname, kernel in KERNELS:
            results[wname, kname] = _time(lambda: fn(kernel), args.repeats)

    width = max(len(w) for w, _ in workloads)
    header = f"{'workload':<{width}}  " + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for wname, _ in workloads:
        row = f"{wname:<{width}}  "
        for kname in names:
            row += f"{results[wname, kname] * 1e3:>10.2f}ms"
        if len(names) == 2:
            ratio = results[wname, "pure"] / results[wname, "compiled"]
            row += f"{ratio:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
