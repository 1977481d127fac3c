# cython: boundscheck=False, wraparound=False, cdivision=True
"""Dense two-phase tableau simplex, compiled backend.

Mirrors ``_simplex_py.simplex_solve`` operation for operation so the
two backends return bitwise identical results; see that module for the
algorithm description.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITERATION_LIMIT = 3

cdef int _BLAND_AFTER = 5000

# C copies of the status codes, usable inside nogil blocks
cdef int _C_OPTIMAL = 0
cdef int _C_UNBOUNDED = 2
cdef int _C_ITERATION_LIMIT = 3


cdef void _pivot(double[:, ::1] T, long long[::1] basis, Py_ssize_t row,
                 Py_ssize_t col, Py_ssize_t nrows, Py_ssize_t ncols) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double piv = T[row, col]
    cdef double f
    for k in range(ncols):
        T[row, k] = T[row, k] / piv
    for i in range(nrows):
        if i == row:
            continue
        f = T[i, col]
        if f != 0.0:
            for k in range(ncols):
                T[i, k] = T[i, k] - f * T[row, k]
    for i in range(nrows):
        T[i, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


cdef Py_ssize_t _choose_entering(double[:, ::1] T, Py_ssize_t m,
                                 Py_ssize_t ncols, double tol,
                                 bint bland) noexcept nogil:
    cdef Py_ssize_t j, best = -1
    cdef double val, best_val = 0.0
    if bland:
        for j in range(ncols):
            if T[m, j] < -tol:
                return j
        return -1
    best_val = T[m, 0] if ncols > 0 else 0.0
    best = 0
    for j in range(1, ncols):
        val = T[m, j]
        if val < best_val:
            best_val = val
            best = j
    if ncols == 0 or best_val >= -tol:
        return -1
    return best


cdef bint _lex_less(double[:, ::1] T, Py_ssize_t i, Py_ssize_t r,
                    Py_ssize_t col, Py_ssize_t rhs_col) noexcept nogil:
    cdef Py_ssize_t k
    cdef double ai = T[i, col]
    cdef double ar = T[r, col]
    cdef double vi, vr
    for k in range(rhs_col):
        vi = T[i, k] / ai
        vr = T[r, k] / ar
        if vi != vr:
            return vi < vr
    return False


cdef Py_ssize_t _choose_leaving(double[:, ::1] T, long long[::1] basis,
                                Py_ssize_t col, Py_ssize_t m,
                                Py_ssize_t rhs_col, double tol) noexcept nogil:
    # Ratio-test row, or -1 for an unbounded ray, -2 for breakdown.
    # Entries in the band (tol, 1e-10 * colmax] are refused as pivots:
    # they are cancellation noise, and dividing by them would amplify
    # rounding error through the whole tableau.
    cdef Py_ssize_t i, best_row = -1
    cdef double a, rhs, ratio, best_ratio = 0.0
    cdef double colmax = 0.0, ptol
    cdef bint have = False
    for i in range(m):
        a = T[i, col]
        if a > colmax:
            colmax = a
    ptol = tol
    if 1e-10 * colmax > ptol:
        ptol = 1e-10 * colmax
    for i in range(m):
        a = T[i, col]
        if a > ptol:
            rhs = T[i, rhs_col]
            if rhs < 0.0:
                rhs = 0.0
            ratio = rhs / a
            if (not have) or ratio < best_ratio or (
                ratio == best_ratio and _lex_less(T, i, best_row, col, rhs_col)
            ):
                best_ratio = ratio
                best_row = i
                have = True
    if best_row < 0:
        return -1 if colmax <= tol else -2
    return best_row


cdef (int, long) _run(double[:, ::1] T, long long[::1] basis, Py_ssize_t m,
                      Py_ssize_t ncols, Py_ssize_t width, double tol,
                      long max_iter, long start_iter,
                      Py_ssize_t art_start) noexcept nogil:
    # When art_start is nonnegative the run is phase 1 and the columns
    # from that index on are artificials.  The loop then stops as soon
    # as no basic artificial is positive: the cost-row total drifts over
    # pivots, and chasing its residual noise below zero picks
    # noise-magnitude pivots that corrupt the tableau.
    cdef Py_ssize_t col, row, i
    cdef long it = start_iter
    cdef bint art_clear
    while True:
        if art_start >= 0:
            art_clear = True
            for i in range(m):
                if basis[i] >= art_start and T[i, width - 1] > 0.0:
                    art_clear = False
                    break
            if art_clear:
                return _C_OPTIMAL, it
        col = _choose_entering(T, m, ncols, tol, it >= _BLAND_AFTER)
        if col < 0:
            return _C_OPTIMAL, it
        row = _choose_leaving(T, basis, col, m, width - 1, tol)
        if row == -1:
            return _C_UNBOUNDED, it
        if row == -2:
            return _C_ITERATION_LIMIT, it
        _pivot(T, basis, row, col, m + 1, width)
        it += 1
        if it >= max_iter:
            return _C_ITERATION_LIMIT, it


def simplex_solve(A, b, c, double tol=1e-9, long max_iter=0):
    """Solve min c.x s.t. Ax = b, x >= 0.

    Returns (status, x, obj, y) where y holds the equality-row duals.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A_ = np.ascontiguousarray(A, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b_ = np.asarray(b, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c_ = np.asarray(c, dtype=np.float64)
    cdef Py_ssize_t m = A_.shape[0]
    cdef Py_ssize_t n = A_.shape[1]
    cdef Py_ssize_t width = n + m + 1
    if max_iter <= 0:
        max_iter = 20000 + 50 * (m + n)

    T_arr = np.zeros((m + 1, width), dtype=np.float64)
    basis_arr = np.arange(n, n + m, dtype=np.int64)
    sign_arr = np.where(b_ < 0.0, -1.0, 1.0)
    cdef double[:, ::1] T = T_arr
    cdef long long[::1] basis = basis_arr
    cdef double[::1] sign = sign_arr
    cdef double[::1] bv = b_
    cdef double[::1] cv = c_
    cdef double[:, ::1] Av = A_

    cdef Py_ssize_t i, k
    with nogil:
        for i in range(m):
            for k in range(n):
                T[i, k] = Av[i, k] * sign[i]
            T[i, n + i] = 1.0
            T[i, width - 1] = bv[i] * sign[i]
        # phase 1 cost row: minus the running sum of all rows
        for i in range(m):
            for k in range(width):
                T[m, k] = T[m, k] - T[i, k]
        for k in range(n, n + m):
            T[m, k] = 0.0

    cdef int status
    cdef long it
    with nogil:
        status, it = _run(T, basis, m, n + m, width, tol, max_iter, 0, n)
    # measure infeasibility from the artificial variables themselves, not
    # from the cost-row total, which is unreliable near zero after drift
    cdef double phase1_obj = 0.0
    for i in range(m):
        if basis[i] >= n and T[i, width - 1] > 0.0:
            phase1_obj += T[i, width - 1]
    cdef double bscale = float(np.max(np.abs(b_))) if m else 0.0
    cdef double feas_tol = 1e-7 * (1.0 + bscale)
    if phase1_obj > feas_tol:
        # phase 1 is bounded below by zero, so a clean optimum above the
        # tolerance means infeasible; anything else is numerical breakdown
        if status == OPTIMAL:
            return INFEASIBLE, np.zeros(n), np.nan, np.zeros(m)
        return ITERATION_LIMIT, np.zeros(n), np.nan, np.zeros(m)
    # feasible enough: proceed even if phase 1 ended on a numerical stall

    cdef Py_ssize_t cand
    cdef double rowmax, drive_tol, av
    with nogil:
        # drive artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= n:
                rowmax = 0.0
                for k in range(n):
                    av = T[i, k] if T[i, k] >= 0.0 else -T[i, k]
                    if av > rowmax:
                        rowmax = av
                drive_tol = tol
                if 1e-10 * rowmax > drive_tol:
                    drive_tol = 1e-10 * rowmax
                cand = -1
                for k in range(n):
                    if T[i, k] > drive_tol or T[i, k] < -drive_tol:
                        cand = k
                        break
                if cand >= 0:
                    _pivot(T, basis, i, cand, m + 1, width)
        # phase 2 cost row
        for k in range(width):
            T[m, k] = 0.0
        for k in range(n):
            T[m, k] = cv[k]
        for i in range(m):
            if basis[i] < n and cv[basis[i]] != 0.0:
                for k in range(width):
                    T[m, k] = T[m, k] - cv[basis[i]] * T[i, k]
        status, it = _run(T, basis, m, n, width, tol, max_iter, it, -1)

    if status != OPTIMAL:
        return status, np.zeros(n), np.nan, np.zeros(m)

    x = np.zeros(n, dtype=np.float64)
    y = np.empty(m, dtype=np.float64)
    cdef double[::1] xv = x
    cdef double[::1] yv = y
    for i in range(m):
        if basis[i] < n:
            xv[basis[i]] = T[i, width - 1]
    for i in range(m):
        yv[i] = -T[m, n + i] * sign[i]
    obj = -T[m, width - 1]
    return OPTIMAL, x, obj, y
