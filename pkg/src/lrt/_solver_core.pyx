# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled backtracking kernel for Sudoku search.

Bitmask row/column/box occupancy, iterative backtracking. Must stay
behaviourally identical to lrt._solver_py.search: branch on the first empty
cell in row-major order, digits ascending, so solution order matches the
pure kernel exactly.
"""

KERNEL_NAME = "compiled"

MAX_SIDE = 25


def search(cells, int box_size, long limit, bint collect=True):
    """Count, and optionally collect, completions of a partial grid.

    Same contract as lrt._solver_py.search.
    """
    cdef int side = box_size * box_size
    cdef int ncells = side * side
    if side > MAX_SIDE:
        raise ValueError(f"box_size {box_size} exceeds bitmask kernel maximum (5)")
    if len(cells) != ncells:
        raise ValueError(f"expected {ncells} cells, got {len(cells)}")

    cdef unsigned int rows[25]
    cdef unsigned int cols[25]
    cdef unsigned int boxes[25]
    cdef int grid[625]
    cdef int emp_i[625]
    cdef int emp_r[625]
    cdef int emp_c[625]
    cdef int emp_b[625]
    cdef int trial[626]
    cdef int i, r, c, b, v, d, level, n_empty, found, j
    cdef unsigned int bit, used
    cdef long count = 0

    for i in range(side):
        rows[i] = 0
        cols[i] = 0
        boxes[i] = 0

    n_empty = 0
    for i in range(ncells):
        v = cells[i]
        grid[i] = v
        r = i // side
        c = i % side
        b = (r // box_size) * box_size + (c // box_size)
        if v:
            bit = 1u << (v - 1)
            if (rows[r] | cols[c] | boxes[b]) & bit:
                return 0, []
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
        else:
            emp_i[n_empty] = i
            emp_r[n_empty] = r
            emp_c[n_empty] = c
            emp_b[n_empty] = b
            n_empty += 1

    solutions = []
    if limit <= 0:
        return 0, solutions

    level = 0
    trial[0] = 0
    while level >= 0:
        if level == n_empty:
            count += 1
            if collect:
                solutions.append([grid[j] for j in range(ncells)])
            if count >= limit:
                break
            level -= 1
            if level < 0:
                break
            bit = 1u << (trial[level] - 1)
            rows[emp_r[level]] ^= bit
            cols[emp_c[level]] ^= bit
            boxes[emp_b[level]] ^= bit
            grid[emp_i[level]] = 0
            continue
        r = emp_r[level]
        c = emp_c[level]
        b = emp_b[level]
        used = rows[r] | cols[c] | boxes[b]
        found = 0
        for d in range(trial[level] + 1, side + 1):
            bit = 1u << (d - 1)
            if used & bit:
                continue
            grid[emp_i[level]] = d
            rows[r] |= bit
            cols[c] |= bit
            boxes[b] |= bit
            trial[level] = d
            level += 1
            trial[level] = 0
            found = 1
            break
        if not found:
            trial[level] = 0
            level -= 1
            if level >= 0:
                bit = 1u << (trial[level] - 1)
                rows[emp_r[level]] ^= bit
                cols[emp_c[level]] ^= bit
                boxes[emp_b[level]] ^= bit
                grid[emp_i[level]] = 0
    return count, solutions
