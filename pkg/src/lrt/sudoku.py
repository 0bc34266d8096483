"""Sudoku domain: grids, validation, brute-force solving, generation, dataset IO.

Grids are parameterized by box size n: the board is n^2 x n^2 with n^4 cells,
digits 1..n^2, and 0 marking an empty cell. n=3 is the standard 9x9 board and
n=2 is the 4x4 board used for desk-scale training.

The brute-force solver is the oracle everything downstream is validated
against; it never participates in the model's forward path. It dispatches to
a compiled kernel when available (see `solver_backend`), with a pure-Python
fallback carrying the identical search contract.
"""

from __future__ import annotations

import os
import random
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class DatasetError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


def _select_kernel():
    forced = os.environ.get("LRT_SOLVER", "").strip().lower()
    if forced == "pure":
        from . import _solver_py
        return _solver_py
    if forced == "compiled":
        from . import _solver_core
        return _solver_core
    if forced:
        raise ValueError(
            f"LRT_SOLVER={forced!r} is not a kernel name (use 'pure' or 'compiled')"
        )
    try:
        from . import _solver_core
        return _solver_core
    except ImportError:
        from . import _solver_py
        return _solver_py


_kernel = _select_kernel()


def solver_backend() -> str:
    """Name of the active search kernel: 'compiled' or 'pure'."""
    return _kernel.KERNEL_NAME


# Fewest givens for which a unique-solution puzzle exists; used to validate
# generate_puzzle's target. Values for n<=3 are the known minimums.
MIN_UNIQUE_CLUES = {2: 4, 3: 17}


@dataclass(frozen=True)
class Grid:
    """An n^2 x n^2 Sudoku board as a flat row-major tuple of digits.

    Digits run 1..n^2; 0 is an empty cell. Instances are immutable and
    validated on construction.
    """

    box_size: int
    cells: tuple

    def __post_init__(self):
        n = self.box_size
        if not isinstance(n, int) or n < 2:
            raise ValueError(f"box_size must be an integer >= 2, got {n!r}")
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        if len(cells) != n ** 4:
            raise ValueError(
                f"grid with box_size {n} needs {n ** 4} cells, got {len(cells)}"
            )
        side = n * n
        for i, v in enumerate(cells):
            if not isinstance(v, (int, np.integer)) or not 0 <= v <= side:
                raise ValueError(f"cell {i} holds {v!r}, expected 0..{side}")

    @property
    def side(self) -> int:
        return self.box_size * self.box_size

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def clue_count(self) -> int:
        return sum(1 for v in self.cells if v)

    def is_complete(self) -> bool:
        return all(v != 0 for v in self.cells)

    def to_string(self) -> str:
        """One digit character per cell; only defined for n <= 3."""
        if self.side > 9:
            raise ValueError("string form supports box_size <= 3 only")
        return "".join(str(v) for v in self.cells)

    @classmethod
    def from_string(cls, text: str, box_size: int) -> "Grid":
        n_cells = box_size ** 4
        if len(text) != n_cells:
            raise ValueError(
                f"expected {n_cells} digit characters, got {len(text)}"
            )
        if not text.isdigit():
            raise ValueError("puzzle string may only contain digits")
        return cls(box_size, tuple(int(ch) for ch in text))


@dataclass(frozen=True)
class PuzzlePair:
    """A puzzle grid with empties and its unique completed solution."""

    puzzle: Grid
    solution: Grid

    def check(self):
        """Raise unless the structural invariants hold.

        Uniqueness is the generator's contract and is not re-verified here
        (it needs a solver pass; the oracle tests cover it).
        """
        if self.puzzle.box_size != self.solution.box_size:
            raise ValueError("puzzle and solution box sizes differ")
        if not self.solution.is_complete():
            raise ValueError("solution contains empty cells")
        if violation_count(self.solution) != 0:
            raise ValueError("solution violates Sudoku constraints")
        for i, v in enumerate(self.puzzle.cells):
            if v and v != self.solution.cells[i]:
                raise ValueError(f"puzzle clue at cell {i} contradicts solution")


@lru_cache(maxsize=None)
def units(box_size: int):
    """All row, column, and box cell-index groups, as a tuple of tuples."""
    n = box_size
    side = n * n
    out = []
    for r in range(side):
        out.append(tuple(r * side + c for c in range(side)))
    for c in range(side):
        out.append(tuple(r * side + c for r in range(side)))
    for br in range(n):
        for bc in range(n):
            out.append(tuple(
                (br * n + dr) * side + (bc * n + dc)
                for dr in range(n) for dc in range(n)
            ))
    return tuple(out)


def violation_count(g: Grid) -> int:
    """Total excess digit occurrences over all rows, columns, and boxes.

    Each digit appearing k > 1 times in a unit contributes k - 1. Empties
    never count, so an empty grid scores 0 and a grid is a valid (partial)
    position iff the count is 0.
    """
    total = 0
    for unit in units(g.box_size):
        counts = Counter(g.cells[i] for i in unit if g.cells[i])
        total += sum(k - 1 for k in counts.values() if k > 1)
    return total


def encode_grid(g: Grid) -> np.ndarray:
    """One-hot encode a grid as an n^4 x (n^2 + 1) float64 matrix.

    Row i is one-hot at column g.cells[i]; column 0 means empty.
    """
    side = g.side
    out = np.zeros((g.n_cells, side + 1), dtype=np.float64)
    out[np.arange(g.n_cells), np.asarray(g.cells)] = 1.0
    return out


def decode_grid(one_hot: np.ndarray) -> Grid:
    """Invert encode_grid. Rejects rows that are not exactly one-hot."""
    arr = np.asarray(one_hot)
    if arr.ndim != 2:
        raise ValueError(f"one-hot grid must be 2-D, got shape {arr.shape}")
    n_cells, width = arr.shape
    n = round(n_cells ** 0.25)
    if n < 2 or n ** 4 != n_cells or width != n * n + 1:
        raise ValueError(f"shape {arr.shape} is not an n^4 x (n^2+1) grid")
    is_zero = arr == 0.0
    is_one = arr == 1.0
    if not np.all(is_zero | is_one) or not np.all(is_one.sum(axis=1) == 1):
        bad = int(np.argmin(np.all(is_zero | is_one, axis=1) & (is_one.sum(axis=1) == 1)))
        raise ValueError(f"row {bad} is not one-hot")
    return Grid(n, tuple(int(v) for v in np.argmax(arr, axis=1)))


def solve_brute_force(g: Grid, limit: int):
    """Up to `limit` completions of g, by deterministic exhaustive backtracking.

    The search always branches on the first empty cell in row-major order and
    tries digits ascending, so the returned list order is reproducible. An
    unsatisfiable grid yields an empty list.
    """
    if limit < 1:
        raise ValueError("limit must be a positive integer")
    _, sols = _kernel.search(g.cells, g.box_size, limit, collect=True)
    return [Grid(g.box_size, tuple(s)) for s in sols]


def count_completions(g: Grid, limit: int) -> int:
    """Number of completions of g, counted up to `limit` (no materialization)."""
    if limit < 1:
        raise ValueError("limit must be a positive integer")
    count, _ = _kernel.search(g.cells, g.box_size, limit, collect=False)
    return count


def random_solved_grid(rng: random.Random, box_size: int) -> Grid:
    """A uniformly-shuffled complete grid via randomized backtracking."""
    n = box_size
    side = n * n
    ncells = side * side
    rows = [0] * side
    cols = [0] * side
    boxes = [0] * side
    grid = [0] * ncells
    coords = []
    for i in range(ncells):
        r, c = divmod(i, side)
        coords.append((r, c, (r // n) * n + (c // n)))

    def fill(i):
        if i == ncells:
            return True
        r, c, b = coords[i]
        used = rows[r] | cols[c] | boxes[b]
        digits = list(range(1, side + 1))
        rng.shuffle(digits)
        for d in digits:
            bit = 1 << (d - 1)
            if used & bit:
                continue
            grid[i] = d
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
            if fill(i + 1):
                return True
            rows[r] ^= bit
            cols[c] ^= bit
            boxes[b] ^= bit
            grid[i] = 0
        return False

    if not fill(0):
        raise RuntimeError("random fill failed (should be impossible)")
    return Grid(n, tuple(grid))


def generate_puzzle(rng_seed: int, box_size: int, target_clues: int) -> PuzzlePair:
    """Deterministically generate a unique-solution puzzle.

    Fills a random complete grid, then digs clues in random order, keeping a
    removal only if the puzzle still has exactly one completion. Digging stops
    at `target_clues` or when no further cell can be removed, so the result
    may have more clues than requested but never fewer.
    """
    n = box_size
    n_cells = n ** 4
    lower = MIN_UNIQUE_CLUES.get(n, n * n - 1)
    if not lower <= target_clues <= n_cells:
        raise ValueError(
            f"target_clues must be in [{lower}, {n_cells}] for box_size {n}"
        )
    rng = random.Random(rng_seed)
    solution = random_solved_grid(rng, n)
    order = list(range(n_cells))
    rng.shuffle(order)
    cells = list(solution.cells)
    clues = n_cells
    for idx in order:
        if clues <= target_clues:
            break
        saved = cells[idx]
        cells[idx] = 0
        count, _ = _kernel.search(cells, n, 2, collect=False)
        if count == 1:
            clues -= 1
        else:
            cells[idx] = saved
    return PuzzlePair(Grid(n, tuple(cells)), solution)


DATASET_MAGIC = "sudoku-v1"


def write_dataset(pairs, path, box_size: int | None = None):
    """Write pairs as text: header line, then `<puzzle>,<solution>` per pair.

    Every pair is structurally validated first. `box_size` is only consulted
    when `pairs` is empty (the header still needs an n).
    """
    pairs = list(pairs)
    if pairs:
        box_size = pairs[0].puzzle.box_size
    elif box_size is None:
        raise ValueError("box_size is required to write an empty dataset")
    if box_size > 3:
        raise ValueError("dataset format stores one digit character per cell; box_size <= 3")
    lines = [f"{DATASET_MAGIC} n={box_size}\n"]
    for i, pair in enumerate(pairs):
        pair.check()
        if pair.puzzle.box_size != box_size:
            raise ValueError(f"pair {i} has box_size {pair.puzzle.box_size}, expected {box_size}")
        lines.append(f"{pair.puzzle.to_string()},{pair.solution.to_string()}\n")
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def read_dataset(path):
    """Read a dataset file written by write_dataset; returns list of PuzzlePair."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError("line 1: missing header")
    header = lines[0]
    prefix = f"{DATASET_MAGIC} n="
    if not header.startswith(prefix) or not header[len(prefix):].isdigit():
        raise DatasetError(f"line 1: bad header {header!r}")
    n = int(header[len(prefix):])
    if n < 2:
        raise DatasetError(f"line 1: bad box size {n}")
    n_cells = n ** 4
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if len(line) != 2 * n_cells + 1 or line[n_cells] != ",":
            raise DatasetError(
                f"line {lineno}: expected {n_cells} digits, a comma, {n_cells} digits"
            )
        puz_s, sol_s = line[:n_cells], line[n_cells + 1:]
        try:
            pair = PuzzlePair(Grid.from_string(puz_s, n), Grid.from_string(sol_s, n))
            pair.check()
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
        pairs.append(pair)
    return pairs


def clue_histogram(pairs) -> dict:
    """Clue-count -> number of puzzles, sorted by clue count."""
    counts = Counter(p.puzzle.clue_count() for p in pairs)
    return dict(sorted(counts.items()))
