"""Dense two-phase tableau simplex, pure NumPy backend.

Solves the standard form

    min c.x  s.t.  A x = b,  x >= 0

with deterministic pivoting: entering column by most negative reduced
cost (lowest index on exact ties), leaving row by minimum ratio with
exact ties broken lexicographically over the scaled rows, which stops
degenerate bases from repeating.  After a fixed pivot budget the
entering rule additionally switches to Bland's rule.  The compiled
backend in ``_simplex.pyx`` mirrors this implementation operation for
operation, so both produce bitwise equal results.

Statuses: 0 optimal, 1 infeasible, 2 unbounded, 3 pivot budget hit.
"""

from __future__ import annotations

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

_BLAND_AFTER = 5000


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    piv = T[row, col]
    T[row, :] = T[row, :] / piv
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row, :])
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _choose_entering(red: np.ndarray, tol: float, bland: bool) -> int:
    if bland:
        below = np.nonzero(red < -tol)[0]
        return int(below[0]) if below.size else -1
    j = int(np.argmin(red))
    return j if red[j] < -tol else -1


def _lex_less(T: np.ndarray, i: int, r: int, col: int) -> bool:
    """Compare rows i and r scaled by their pivot entries, lexicographically."""
    vi = T[i, :-1] / T[i, col]
    vr = T[r, :-1] / T[r, col]
    neq = np.nonzero(vi != vr)[0]
    if neq.size == 0:
        return False
    k = neq[0]
    return bool(vi[k] < vr[k])


def _choose_leaving(T: np.ndarray, basis: np.ndarray, col: int, m: int,
                    tol: float) -> int:
    """Ratio-test row, or -1 for an unbounded ray, -2 for breakdown.

    Entries in the band (tol, 1e-10 * colmax] are refused as pivots:
    they are cancellation noise, and dividing by them would amplify
    rounding error through the whole tableau.
    """
    colmax = 0.0
    for i in range(m):
        a = T[i, col]
        if a > colmax:
            colmax = a
    ptol = max(tol, 1e-10 * colmax)
    best_ratio = np.inf
    best_row = -1
    for i in range(m):
        a = T[i, col]
        if a > ptol:
            rhs = T[i, -1]
            if rhs < 0.0:
                rhs = 0.0
            ratio = rhs / a
            if ratio < best_ratio or (
                ratio == best_ratio and best_row >= 0
                and _lex_less(T, i, best_row, col)
            ):
                best_ratio = ratio
                best_row = i
    if best_row < 0:
        return -1 if colmax <= tol else -2
    return best_row


def _run(T: np.ndarray, basis: np.ndarray, m: int, ncols: int, tol: float,
         max_iter: int, start_iter: int, art_start: int = -1) -> tuple[int, int]:
    """Pivot until the current cost row is optimal. Returns (status, iters).

    When ``art_start`` is nonnegative the run is phase 1 and the columns
    from that index on are artificials.  The loop then stops as soon as
    no basic artificial is positive: the cost-row total drifts over
    pivots, and chasing its residual noise below zero picks
    noise-magnitude pivots that corrupt the tableau.
    """
    it = start_iter
    while True:
        if art_start >= 0 and not bool(
            np.any((basis >= art_start) & (T[:m, -1] > 0.0))
        ):
            return OPTIMAL, it
        red = T[m, :ncols]
        col = _choose_entering(red, tol, bland=it >= _BLAND_AFTER)
        if col < 0:
            return OPTIMAL, it
        row = _choose_leaving(T, basis, col, m, tol)
        if row == -1:
            return UNBOUNDED, it
        if row == -2:
            return ITERATION_LIMIT, it
        _pivot(T, basis, row, col)
        it += 1
        if it >= max_iter:
            return ITERATION_LIMIT, it


def simplex_solve(A: np.ndarray, b: np.ndarray, c: np.ndarray,
                  tol: float = 1e-9, max_iter: int = 0):
    """Solve min c.x s.t. Ax = b, x >= 0.

    Returns (status, x, obj, y) where y holds the equality-row duals.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m, n = A.shape
    if max_iter <= 0:
        max_iter = 20000 + 50 * (m + n)

    sign = np.where(b < 0.0, -1.0, 1.0)
    # tableau: [A | I | rhs], cost row last
    T = np.zeros((m + 1, n + m + 1), dtype=np.float64)
    T[:m, :n] = A * sign[:, None]
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b * sign
    basis = np.arange(n, n + m, dtype=np.int64)

    # phase 1: minimize the artificial sum; reduced costs = -sum of rows
    for i in range(m):
        T[m, :] -= T[i, :]
    T[m, n:n + m] = 0.0

    status, it = _run(T, basis, m, n + m, tol, max_iter, 0, art_start=n)
    # measure infeasibility from the artificial variables themselves, not
    # from the cost-row total, which is unreliable near zero after drift
    phase1_obj = 0.0
    for i in range(m):
        if basis[i] >= n and T[i, -1] > 0.0:
            phase1_obj += T[i, -1]
    bscale = float(np.max(np.abs(b))) if m else 0.0
    feas_tol = 1e-7 * (1.0 + bscale)
    if phase1_obj > feas_tol:
        # phase 1 is bounded below by zero, so a clean optimum above the
        # tolerance means infeasible; anything else is numerical breakdown
        bad = INFEASIBLE if status == OPTIMAL else ITERATION_LIMIT
        return bad, np.zeros(n), np.nan, np.zeros(m)
    # feasible enough: proceed even if phase 1 ended on a numerical stall

    # drive artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= n:
            row = T[i, :n]
            drive_tol = max(tol, 1e-10 * float(np.max(np.abs(row))))
            cand = np.nonzero(np.abs(row) > drive_tol)[0]
            if cand.size:
                _pivot(T, basis, i, int(cand[0]))

    # phase 2 cost row
    T[m, :] = 0.0
    T[m, :n] = c
    for i in range(m):
        if basis[i] < n and c[basis[i]] != 0.0:
            T[m, :] -= c[basis[i]] * T[i, :]

    status, it = _run(T, basis, m, n, tol, max_iter, it)
    if status != OPTIMAL:
        return status, np.zeros(n), np.nan, np.zeros(m)

    x = np.zeros(n, dtype=np.float64)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, -1]
    obj = -T[m, -1]
    # duals: reduced cost of the artificial column for row i equals -pi_i
    y = -T[m, n:n + m] * sign
    return OPTIMAL, x, obj, y
