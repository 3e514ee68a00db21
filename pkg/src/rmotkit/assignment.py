"""Linear assignment with inadmissible pairs.

``solve_min_cost`` returns a maximum-cardinality matching over admissible
pairs that, among all maximum-cardinality matchings, has minimum total cost.
Equal-cost optima are broken deterministically: rows are considered in index
order and each takes the lowest column consistent with some optimum, with
"unmatched" ranked after every column.

Forbidden entries are encoded as ``NaN`` (``FORBIDDEN``) or by passing an
explicit boolean ``admissible`` mask.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

FORBIDDEN = float("nan")

# relative tolerance used to decide that two matchings have equal cost
TIE_TOL = 1e-12

Pair = Tuple[int, int]


def _as_problem(cost, admissible) -> Tuple[np.ndarray, np.ndarray]:
    m = np.asarray(cost, dtype=float)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, 0)
    if m.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {m.shape}")
    adm = ~np.isnan(m)
    if admissible is not None:
        adm &= np.asarray(admissible, dtype=bool)
    if not np.all(np.isfinite(m[adm])):
        raise ValueError("admissible cost entries must be finite")
    return m, adm


def _solve_sub(m: np.ndarray, adm: np.ndarray, rows: Sequence[int], cols: Sequence[int]):
    """Optimal (cardinality, cost, pairs) restricted to ``rows`` x ``cols``."""
    if not rows or not cols:
        return 0, 0.0, []
    sub_adm = adm[np.ix_(rows, cols)]
    if not sub_adm.any():
        return 0, 0.0, []
    sub = m[np.ix_(rows, cols)]
    k = min(len(rows), len(cols))
    # any extra admissible pair outweighs every possible cost difference
    big = 2.0 * k * (float(np.abs(sub[sub_adm]).max()) + 1.0) + 1.0
    filled = np.where(sub_adm, sub, big)
    ri, ci = linear_sum_assignment(filled)
    pairs = [(rows[a], cols[b]) for a, b in zip(ri, ci) if sub_adm[a, b]]
    total = math.fsum(m[r, c] for r, c in pairs)
    return len(pairs), total, pairs


def solve_min_cost(cost, admissible: Optional[np.ndarray] = None) -> List[Pair]:
    """Minimum-cost maximum-cardinality matching as a row-sorted list of (row, col)."""
    m, adm = _as_problem(cost, admissible)
    n_rows, n_cols = m.shape
    all_rows, all_cols = list(range(n_rows)), list(range(n_cols))
    best_card, best_cost, pairs = _solve_sub(m, adm, all_rows, all_cols)
    if best_card == 0:
        return []
    tol = TIE_TOL * max(1.0, abs(best_cost))

    current = dict(pairs)
    fixed: List[Pair] = []
    fixed_cost = 0.0
    free_rows = list(all_rows)
    free_cols = set(all_cols)
    for i in all_rows:
        cur = current.get(i)
        rest_rows = [r for r in free_rows if r != i]
        for j in sorted(free_cols):
            if cur is not None and j >= cur:
                break
            if not adm[i, j]:
                continue
            rest_cols = [c for c in sorted(free_cols) if c != j]
            card, sub_cost, sub_pairs = _solve_sub(m, adm, rest_rows, rest_cols)
            total = fixed_cost + m[i, j] + sub_cost
            if len(fixed) + 1 + card == best_card and total <= best_cost + tol:
                current = dict(fixed)
                current[i] = j
                current.update(sub_pairs)
                break
        free_rows.remove(i)
        j = current.get(i)
        if j is not None:
            fixed.append((i, j))
            fixed_cost += m[i, j]
            free_cols.discard(j)
    return fixed


def solve_max_score(score, admissible: Optional[np.ndarray] = None) -> List[Pair]:
    """Maximum-score maximum-cardinality matching (negated ``solve_min_cost``)."""
    s = np.asarray(score, dtype=float)
    return solve_min_cost(-s, admissible)


def matching_cost(cost, pairs: Sequence[Pair]) -> float:
    m = np.asarray(cost, dtype=float)
    return math.fsum(m[r, c] for r, c in pairs)
