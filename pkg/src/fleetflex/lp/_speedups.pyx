# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bounded-variable two-phase simplex kernel.

Twin of ``fleetflex.lp._kernel_py`` with identical pivoting rules (largest
reduced-cost violation, Bland's lowest-index rule after a degenerate run,
lowest-variable-index ratio ties, explicit basis inverse with periodic
Gauss-Jordan refactorization).  Summation order differs from the BLAS
calls in the numpy kernel, so the two may round differently on ties; each
kernel on its own is deterministic.

Columns are stored transposed (``WT`` is columns x rows) so every inner
loop runs over contiguous memory.
"""

import numpy as np

from libc.math cimport fabs, isfinite

from fleetflex.lp.model import CODE_FAILED, CODE_INFEASIBLE, CODE_OPTIMAL, CODE_UNBOUNDED

KERNEL_NAME = "cython"

cdef enum:
    AT_LO = 0
    AT_UP = 1
    FREE = 2
    BASIC = 3

cdef double PIVOT_TOL = 1e-9
cdef double DEGEN_TOL = 1e-9
cdef double TIE_TOL = 1e-9
cdef int BLAND_AFTER = 30
cdef int REFACTOR_EVERY = 100
cdef double INF = float("inf")


cdef bint _refactor(double[:, ::1] WT, double[::1] h, long long[::1] state,
                    long long[::1] basis, double[::1] value, double[::1] xB,
                    double[:, ::1] Binv, double[:, ::1] gj, double[::1] rhs):
    """Rebuild Binv by Gauss-Jordan with partial pivoting and recompute xB."""
    cdef Py_ssize_t m = Binv.shape[0]
    cdef Py_ssize_t ntot = WT.shape[0]
    cdef Py_ssize_t i, j, k, piv
    cdef double best, tmp, f, v, s

    for i in range(m):
        for j in range(m):
            gj[i, j] = WT[basis[j], i]
            gj[i, m + j] = 1.0 if i == j else 0.0
    for k in range(m):
        piv = -1
        best = 1e-12
        for i in range(k, m):
            tmp = fabs(gj[i, k])
            if tmp > best:
                best = tmp
                piv = i
        if piv < 0:
            return False
        if piv != k:
            for j in range(2 * m):
                tmp = gj[k, j]
                gj[k, j] = gj[piv, j]
                gj[piv, j] = tmp
        f = gj[k, k]
        for j in range(2 * m):
            gj[k, j] /= f
        for i in range(m):
            if i == k:
                continue
            f = gj[i, k]
            if f != 0.0:
                for j in range(2 * m):
                    gj[i, j] -= f * gj[k, j]
    for i in range(m):
        for j in range(m):
            Binv[i, j] = gj[i, m + j]

    for i in range(m):
        rhs[i] = h[i]
    for j in range(ntot):
        if state[j] != BASIC:
            v = value[j]
            if v != 0.0:
                for i in range(m):
                    rhs[i] -= WT[j, i] * v
    for i in range(m):
        s = 0.0
        for k in range(m):
            s += Binv[i, k] * rhs[k]
        if not isfinite(s):
            return False
        xB[i] = s
    return True


cdef tuple _iterate(double[:, ::1] WT, double[::1] h, double[::1] cost,
                    double[::1] clo, double[::1] chi,
                    long long[::1] state, long long[::1] basis,
                    double[::1] value, double[::1] xB,
                    double[:, ::1] Binv, double[::1] y, double[::1] u,
                    double[:, ::1] gj, double[::1] rhs,
                    double opt_tol, int max_iter, int phase, int it0):
    cdef Py_ssize_t m = Binv.shape[0]
    cdef Py_ssize_t ntot = WT.shape[0]
    cdef int it = it0, degen_streak = 0, pivots = 0
    cdef bint bland, movable, to_lower
    cdef Py_ssize_t i, j, k, j_in, leave_pos
    cdef long long st, leave_var, leaving
    cdef double cb, dj, score, best_score, dirn, dr
    cdef double t_own, t_row, du, lim, t, piv, f, enter_val

    while it < max_iter:
        it += 1
        for k in range(m):
            y[k] = 0.0
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0.0:
                for k in range(m):
                    y[k] += cb * Binv[i, k]

        bland = degen_streak >= BLAND_AFTER
        best_score = 0.0
        j_in = -1
        dirn = 0.0
        for j in range(ntot):
            st = state[j]
            if st == BASIC:
                continue
            dj = cost[j]
            for i in range(m):
                dj -= y[i] * WT[j, i]
            movable = chi[j] - clo[j] > 0.0
            score = 0.0
            dr = 0.0
            if st == AT_LO:
                if movable and dj < -opt_tol:
                    score = -dj
                    dr = 1.0
            elif st == AT_UP:
                if movable and dj > opt_tol:
                    score = dj
                    dr = -1.0
            else:  # FREE
                if dj < -opt_tol:
                    score = -dj
                    dr = 1.0
                elif dj > opt_tol:
                    score = dj
                    dr = -1.0
            if score > best_score:
                best_score = score
                j_in = j
                dirn = dr
                if bland:
                    break
        if j_in < 0:
            return CODE_OPTIMAL, it

        for i in range(m):
            f = 0.0
            for k in range(m):
                f += Binv[i, k] * WT[j_in, k]
            u[i] = f

        t_own = chi[j_in] - clo[j_in]
        t_row = INF
        for i in range(m):
            du = dirn * u[i]
            if du > PIVOT_TOL:
                lim = (xB[i] - clo[basis[i]]) / du
            elif du < -PIVOT_TOL:
                lim = (xB[i] - chi[basis[i]]) / du
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < t_row:
                t_row = lim

        if t_own == INF and t_row == INF:
            return (CODE_UNBOUNDED if phase == 2 else CODE_FAILED), it

        if t_own <= t_row:
            for i in range(m):
                xB[i] -= t_own * dirn * u[i]
            state[j_in] = AT_UP if state[j_in] == AT_LO else AT_LO
            value[j_in] = chi[j_in] if state[j_in] == AT_UP else clo[j_in]
            degen_streak = 0
            continue

        leave_pos = -1
        leave_var = ntot + 1
        for i in range(m):
            du = dirn * u[i]
            if du > PIVOT_TOL:
                lim = (xB[i] - clo[basis[i]]) / du
            elif du < -PIVOT_TOL:
                lim = (xB[i] - chi[basis[i]]) / du
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim <= t_row + TIE_TOL and basis[i] < leave_var:
                leave_var = basis[i]
                leave_pos = i

        piv = u[leave_pos]
        if fabs(piv) < PIVOT_TOL:
            if not _refactor(WT, h, state, basis, value, xB, Binv, gj, rhs):
                return CODE_FAILED, it
            continue

        t = t_row
        to_lower = dirn * u[leave_pos] > 0.0
        for i in range(m):
            xB[i] -= t * dirn * u[i]
        leaving = basis[leave_pos]
        state[leaving] = AT_LO if to_lower else AT_UP
        value[leaving] = clo[leaving] if to_lower else chi[leaving]
        enter_val = value[j_in] + dirn * t
        basis[leave_pos] = j_in
        state[j_in] = BASIC
        xB[leave_pos] = enter_val

        f = 1.0 / piv
        for k in range(m):
            Binv[leave_pos, k] *= f
        for i in range(m):
            if i != leave_pos and u[i] != 0.0:
                f = u[i]
                for k in range(m):
                    Binv[i, k] -= f * Binv[leave_pos, k]

        pivots += 1
        if t <= DEGEN_TOL:
            degen_streak += 1
        else:
            degen_streak = 0
        if pivots % REFACTOR_EVERY == 0:
            if not _refactor(WT, h, state, basis, value, xB, Binv, gj, rhs):
                return CODE_FAILED, it
        for i in range(m):
            if not isfinite(xB[i]):
                return CODE_FAILED, it
    return CODE_FAILED, it


def solve_kernel(G, h, c, lo, hi, double feas_tol, double opt_tol, int max_iter):
    """Solve one instance; returns ``(code, x, y, iterations)``."""
    # inputs may arrive as read-only views; memoryviews need writable buffers
    G = np.array(G, dtype=np.float64, order="C", copy=True)
    h = np.array(h, dtype=np.float64, copy=True)
    c = np.array(c, dtype=np.float64, copy=True)
    lo = np.array(lo, dtype=np.float64, copy=True)
    hi = np.array(hi, dtype=np.float64, copy=True)
    cdef Py_ssize_t m = G.shape[0]
    cdef Py_ssize_t n = G.shape[1]
    cdef Py_ssize_t ntot = n + 2 * m

    WT = np.zeros((ntot, m))
    WT[:n, :] = G.T
    WT[n : n + m, :] = np.eye(m)
    clo = np.concatenate([lo, np.zeros(m), np.zeros(m)])
    chi = np.concatenate([hi, np.full(m, np.inf), np.zeros(m)])
    value = np.zeros(ntot)
    state = np.full(ntot, AT_LO, dtype=np.int64)

    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    value[:n] = np.where(has_lo, lo, np.where(has_hi, hi, 0.0))
    state[:n] = np.where(has_lo, AT_LO, np.where(has_hi, AT_UP, FREE))

    r = h - G @ value[:n]
    sgn = np.where(r >= 0.0, 1.0, -1.0)
    WT[n + m + np.arange(m), np.arange(m)] = sgn
    basis = np.where(r >= 0.0, n + np.arange(m), n + m + np.arange(m)).astype(np.int64)
    chi[n + m : ntot][r < 0.0] = np.inf
    state[basis] = BASIC
    xB = np.abs(r)
    Binv = np.diag(np.where(r >= 0.0, 1.0, -1.0)).copy()

    y = np.zeros(m)
    u = np.zeros(m)
    gj = np.zeros((m, 2 * m))
    rhs = np.zeros(m)

    cost1 = np.zeros(ntot)
    cost1[n + m :] = 1.0
    code, it = _iterate(WT, h, cost1, clo, chi, state, basis, value, xB, Binv,
                        y, u, gj, rhs, opt_tol, max_iter, 1, 0)

    def structural():
        x = value[:n].copy()
        on_grid = basis < n
        x[basis[on_grid]] = xB[on_grid]
        return x

    if code != CODE_OPTIMAL:
        return CODE_FAILED, structural(), np.zeros(m), it
    art = basis >= n + m
    infeas = float(xB[art].sum()) if art.any() else 0.0
    infeas += float(value[n + m :].sum())
    if infeas > feas_tol:
        return CODE_INFEASIBLE, structural(), np.zeros(m), it

    chi[n + m :] = 0.0
    cost2 = np.concatenate([c, np.zeros(2 * m)])
    code, it = _iterate(WT, h, cost2, clo, chi, state, basis, value, xB, Binv,
                        y, u, gj, rhs, opt_tol, max_iter, 2, it)
    if code == CODE_OPTIMAL:
        if not _refactor(WT, h, state, basis, value, xB, Binv, gj, rhs):
            return CODE_FAILED, structural(), np.zeros(m), it
        yout = cost2[basis] @ np.asarray(Binv)
        return CODE_OPTIMAL, structural(), yout, it
    return code, structural(), np.zeros(m), it
