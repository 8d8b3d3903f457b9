"""Pure numpy bounded-variable two-phase simplex kernel.

The compiled twin in ``_speedups.pyx`` implements the same pivoting rules;
either kernel must produce an optimal basis for the same instance, though
floating-point round-off may differ between them.

Working system: ``W z = h`` with ``W = [G | I | D]`` over structural
variables, row slacks, and per-row artificials (``D`` holds the sign of the
initial row residual).  Phase 1 minimizes the artificial sum from the
all-slack/artificial basis; phase 2 pins the artificials at zero and
minimizes the real cost.  Entering variables are picked by largest reduced
cost violation, switching to Bland's lowest-index rule after a run of
degenerate steps so cycling cannot occur; ties in the ratio test go to the
lowest variable index.  The basis inverse is kept explicitly, updated by
row operations and refactorized periodically.
"""

from __future__ import annotations

import numpy as np

from fleetflex.lp.model import CODE_FAILED, CODE_INFEASIBLE, CODE_OPTIMAL, CODE_UNBOUNDED

KERNEL_NAME = "python"

AT_LO, AT_UP, FREE, BASIC = 0, 1, 2, 3

PIVOT_TOL = 1e-9
DEGEN_TOL = 1e-9
TIE_TOL = 1e-9
BLAND_AFTER = 30
REFACTOR_EVERY = 100


class _Workspace:
    """Mutable simplex state shared by the two phases."""

    def __init__(self, G: np.ndarray, h: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        m, n = G.shape
        self.m, self.n = m, n
        ntot = n + 2 * m
        self.W = np.zeros((m, ntot))
        self.W[:, :n] = G
        self.W[:, n : n + m] = np.eye(m)
        self.clo = np.concatenate([lo, np.zeros(m), np.zeros(m)])
        self.chi = np.concatenate([hi, np.full(m, np.inf), np.zeros(m)])
        self.value = np.zeros(ntot)
        self.state = np.full(ntot, AT_LO, dtype=np.int64)

        has_lo = np.isfinite(lo)
        has_hi = np.isfinite(hi)
        self.value[:n] = np.where(has_lo, lo, np.where(has_hi, hi, 0.0))
        self.state[:n] = np.where(has_lo, AT_LO, np.where(has_hi, AT_UP, FREE))

        r = h - G @ self.value[:n]
        sgn = np.where(r >= 0.0, 1.0, -1.0)
        self.W[np.arange(m), n + m + np.arange(m)] = sgn
        self.basis = np.where(r >= 0.0, n + np.arange(m), n + m + np.arange(m))
        art_rows = r < 0.0
        self.chi[n + m : ntot][art_rows] = np.inf
        self.state[self.basis] = BASIC
        self.xB = np.abs(r)
        self.h = h
        self.Binv = np.diag(np.where(r >= 0.0, 1.0, sgn))
        self.pivots = 0

    def refactor(self) -> bool:
        Bmat = self.W[:, self.basis]
        try:
            self.Binv = np.linalg.inv(Bmat)
        except np.linalg.LinAlgError:
            return False
        nb = self.state != BASIC
        rhs = self.h - self.W[:, nb] @ self.value[nb]
        self.xB = self.Binv @ rhs
        return bool(np.all(np.isfinite(self.xB)) and np.all(np.isfinite(self.Binv)))

    def x_structural(self) -> np.ndarray:
        x = self.value[: self.n].copy()
        on_grid = self.basis < self.n
        x[self.basis[on_grid]] = self.xB[on_grid]
        return x

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return cost[self.basis] @ self.Binv


def _iterate(ws: _Workspace, cost: np.ndarray, opt_tol: float, max_iter: int, phase: int, it0: int):
    """Run simplex pivots until optimal/unbounded/failed; returns (code, iters)."""
    degen_streak = 0
    it = it0
    while it < max_iter:
        it += 1
        y = cost[ws.basis] @ ws.Binv
        d = cost - y @ ws.W
        d[ws.basis] = 0.0

        movable = ws.chi - ws.clo > 0.0
        score = np.zeros_like(d)
        sel = (ws.state == AT_LO) & movable & (d < -opt_tol)
        score[sel] = -d[sel]
        sel = (ws.state == AT_UP) & movable & (d > opt_tol)
        score[sel] = d[sel]
        sel = (ws.state == FREE) & (np.abs(d) > opt_tol)
        score[sel] = np.abs(d[sel])

        if not score.any():
            return CODE_OPTIMAL, it
        if degen_streak >= BLAND_AFTER:
            j = int(np.argmax(score > 0.0))  # first eligible index
        else:
            j = int(np.argmax(score))
        if ws.state[j] == AT_LO:
            dirn = 1.0
        elif ws.state[j] == AT_UP:
            dirn = -1.0
        else:
            dirn = 1.0 if d[j] < 0.0 else -1.0

        u = ws.Binv @ ws.W[:, j]
        du = dirn * u
        lob = ws.clo[ws.basis]
        hib = ws.chi[ws.basis]
        lim = np.full(ws.m, np.inf)
        dec = du > PIVOT_TOL
        inc = du < -PIVOT_TOL
        lim[dec] = (ws.xB[dec] - lob[dec]) / du[dec]
        lim[inc] = (ws.xB[inc] - hib[inc]) / du[inc]
        np.maximum(lim, 0.0, out=lim)

        t_own = ws.chi[j] - ws.clo[j]  # inf unless both bounds finite
        t_row = float(lim.min()) if ws.m else np.inf

        if not np.isfinite(t_own) and not np.isfinite(t_row):
            # nothing blocks the improving direction
            return (CODE_UNBOUNDED if phase == 2 else CODE_FAILED), it

        if t_own <= t_row:
            # bound flip, basis unchanged
            t = t_own
            ws.xB -= t * du
            ws.state[j] = AT_UP if ws.state[j] == AT_LO else AT_LO
            ws.value[j] = ws.chi[j] if ws.state[j] == AT_UP else ws.clo[j]
            degen_streak = 0  # flips move by a strictly positive range
            continue

        cand = np.flatnonzero(lim <= t_row + TIE_TOL)
        leave_pos = int(cand[np.argmin(ws.basis[cand])])
        t = t_row
        piv = u[leave_pos]
        if abs(piv) < PIVOT_TOL:
            if not ws.refactor():
                return CODE_FAILED, it
            continue

        leaving = int(ws.basis[leave_pos])
        to_lower = du[leave_pos] > 0.0
        ws.xB -= t * du
        ws.state[leaving] = AT_LO if to_lower else AT_UP
        ws.value[leaving] = ws.clo[leaving] if to_lower else ws.chi[leaving]
        enter_val = ws.value[j] + dirn * t
        ws.basis[leave_pos] = j
        ws.state[j] = BASIC
        ws.xB[leave_pos] = enter_val

        ws.Binv[leave_pos] /= piv
        col = u.copy()
        col[leave_pos] = 0.0
        ws.Binv -= np.outer(col, ws.Binv[leave_pos])

        ws.pivots += 1
        degen_streak = degen_streak + 1 if t <= DEGEN_TOL else 0
        if ws.pivots % REFACTOR_EVERY == 0:
            if not ws.refactor():
                return CODE_FAILED, it
        if not np.isfinite(ws.xB).all():
            return CODE_FAILED, it
    return CODE_FAILED, it


def solve_kernel(
    G: np.ndarray,
    h: np.ndarray,
    c: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    feas_tol: float,
    opt_tol: float,
    max_iter: int,
):
    """Solve one instance; returns ``(code, x, y, iterations)``.

    ``y`` is the row dual vector from the final basis (zeros unless the
    final status is optimal).
    """
    G = np.ascontiguousarray(G, dtype=float)
    h = np.ascontiguousarray(h, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    m, n = G.shape
    ws = _Workspace(G, h, lo, hi)
    ntot = n + 2 * m

    cost1 = np.zeros(ntot)
    cost1[n + m :] = 1.0
    code, it = _iterate(ws, cost1, opt_tol, max_iter, phase=1, it0=0)
    if code != CODE_OPTIMAL:
        return CODE_FAILED, ws.x_structural(), np.zeros(m), it
    art = ws.basis >= n + m
    infeas = float(ws.xB[art].sum()) if art.any() else 0.0
    nb_art = ws.value[n + m :].sum()  # nonbasic artificials sit at 0
    infeas += float(nb_art)
    if infeas > feas_tol:
        return CODE_INFEASIBLE, ws.x_structural(), np.zeros(m), it

    ws.chi[n + m :] = 0.0  # artificials pinned for phase 2
    cost2 = np.concatenate([c, np.zeros(2 * m)])
    code, it = _iterate(ws, cost2, opt_tol, max_iter, phase=2, it0=it)
    if code == CODE_OPTIMAL:
        if not ws.refactor():
            return CODE_FAILED, ws.x_structural(), np.zeros(m), it
        y = ws.duals(cost2)
        return CODE_OPTIMAL, ws.x_structural(), y, it
    return code, ws.x_structural(), np.zeros(m), it
