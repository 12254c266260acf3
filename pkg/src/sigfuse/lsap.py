"""Linear sum assignment by shortest augmenting paths.

The solver grows the matching one row at a time. Each step runs a Dijkstra
search over reduced costs ``c[i, j] - u[i] - v[j]`` and then updates the dual
potentials ``u`` and ``v`` so that reduced costs stay non-negative. This is the
Jonker-Volgenant scheme without the initialisation heuristics. It runs in
O(n^3) worst-case time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleMatrix

#: Entries at or above this value are treated as forbidden assignments.
FORBIDDEN = 1e30


@dataclass(frozen=True)
class Assignment:
    """Optimal assignment: ``permutation[i]`` is the column given to row ``i``."""

    permutation: tuple[int, ...]
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(enumerate(self.permutation))


def _as_cost_matrix(matrix) -> np.ndarray:
    cost = np.array(matrix, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    if (cost < 0).any():
        raise ValueError("cost matrix entries must be non-negative")
    cost[cost >= FORBIDDEN] = np.inf
    return cost


def solve(matrix) -> Assignment:
    """Solve the square linear sum assignment problem.

    Args:
        matrix: n x n array-like of non-negative costs. ``inf`` or anything
            at or above :data:`FORBIDDEN` forbids that pairing.

    Returns:
        The minimum-cost assignment. The reported ``total_cost`` is the
        row-order sum of the chosen entries.

    Raises:
        InfeasibleMatrix: if every perfect assignment uses a forbidden entry.
    """
    cost = _as_cost_matrix(matrix)
    n = cost.shape[0]
    if n == 0:
        return Assignment((), 0.0)

    u = np.zeros(n)
    v = np.zeros(n)
    row4col = np.full(n, -1, dtype=np.intp)
    col4row = np.full(n, -1, dtype=np.intp)
    row_ids = np.arange(n)

    for cur_row in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.intp)
        seen_rows = np.zeros(n, dtype=bool)
        seen_cols = np.zeros(n, dtype=bool)
        min_val = 0.0
        i = cur_row
        sink = -1

        while sink < 0:
            seen_rows[i] = True
            reduced = min_val + cost[i] - u[i] - v
            better = ~seen_cols & (reduced < shortest)
            path[better] = i
            shortest[better] = reduced[better]

            frontier = np.where(seen_cols, np.inf, shortest)
            lowest = frontier.min()
            if not np.isfinite(lowest):
                raise InfeasibleMatrix(f"no finite perfect assignment (row {cur_row})")
            ties = np.flatnonzero(frontier == lowest)
            free = ties[row4col[ties] < 0]
            j = int(free[0]) if free.size else int(ties[0])

            min_val = float(lowest)
            seen_cols[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])

        u[cur_row] += min_val
        others = seen_rows & (row_ids != cur_row)
        u[others] += min_val - shortest[col4row[others]]
        v[seen_cols] -= min_val - shortest[seen_cols]

        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur_row:
                break

    perm = tuple(int(c) for c in col4row)
    total = 0.0
    for r, c in enumerate(perm):
        total += float(cost[r, c])
    return Assignment(perm, total)


def read_matrix(path) -> np.ndarray:
    """Read a whitespace-separated matrix file (``inf`` allowed)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    return np.array(rows, dtype=float)
