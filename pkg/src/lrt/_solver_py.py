"""Pure-Python backtracking kernel for Sudoku search.

Fallback for the compiled extension (`lrt._solver_core`). Same interface,
same deterministic search order: always branch on the first empty cell in
row-major order and try digits in ascending order, so both kernels discover
solutions in exactly the same sequence.
"""

KERNEL_NAME = "pure"

MAX_SIDE = 25  # box_size 5; row/col/box occupancy is a bitmask per digit


def search(cells, box_size, limit, collect=True):
    """Count, and optionally collect, completions of a partial grid.

    `cells` is a flat row-major sequence of n^4 ints, 0 = empty. Returns
    ``(count, solutions)`` where count stops once it reaches `limit` and
    `solutions` lists completed grids (flat digit lists) in discovery order,
    empty when `collect` is false. Contradictory givens yield ``(0, [])``.
    """
    n = box_size
    side = n * n
    if side > MAX_SIDE:
        raise ValueError(f"box_size {n} exceeds bitmask kernel maximum (5)")
    if len(cells) != side * side:
        raise ValueError(f"expected {side * side} cells, got {len(cells)}")

    rows = [0] * side
    cols = [0] * side
    boxes = [0] * side
    grid = list(cells)
    empties = []
    for i, v in enumerate(grid):
        r, c = divmod(i, side)
        b = (r // n) * n + (c // n)
        if v:
            bit = 1 << (v - 1)
            if (rows[r] | cols[c] | boxes[b]) & bit:
                return 0, []
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
        else:
            empties.append((i, r, c, b))

    count = 0
    solutions = []
    n_empty = len(empties)

    def walk(k):
        nonlocal count
        if k == n_empty:
            count += 1
            if collect:
                solutions.append(grid[:])
            return
        i, r, c, b = empties[k]
        used = rows[r] | cols[c] | boxes[b]
        for d in range(1, side + 1):
            bit = 1 << (d - 1)
            if used & bit:
                continue
            grid[i] = d
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
            walk(k + 1)
            rows[r] ^= bit
            cols[c] ^= bit
            boxes[b] ^= bit
            grid[i] = 0
            if count >= limit:
                return

    if limit > 0:
        walk(0)
    return count, solutions
