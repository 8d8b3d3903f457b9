"""Solve entry point, kernel selection, and solution certification.

Two interchangeable kernels implement the simplex loop: the compiled
extension ``fleetflex.lp._speedups`` (preferred when built) and the pure
numpy ``fleetflex.lp._kernel_py``.  Set ``FLEETFLEX_KERNEL=python`` or
``=cython`` to force one; :func:`active_kernel_name` reports the default.

Optimal results are certified before being returned: the primal violation
is recomputed from the original instance and a basis dual certificate is
evaluated, so a kernel bug degrades to an explicit FAILED status instead of
a silently wrong answer.
"""

from __future__ import annotations

import os

import numpy as np

from fleetflex.lp import _kernel_py
from fleetflex.lp.model import (
    CODE_INFEASIBLE,
    CODE_OPTIMAL,
    CODE_UNBOUNDED,
    LinearProgram,
    LpSolution,
    LpStatus,
)

__all__ = ["solve", "available_kernels", "active_kernel_name", "FEAS_TOL", "OPT_TOL"]

FEAS_TOL = 1e-6
OPT_TOL = 1e-6

try:
    from fleetflex.lp import _speedups as _compiled
except ImportError:
    _compiled = None


def available_kernels() -> dict:
    kernels = {"python": _kernel_py}
    if _compiled is not None:
        kernels["cython"] = _compiled
    return kernels


def active_kernel_name() -> str:
    forced = os.environ.get("FLEETFLEX_KERNEL", "").strip().lower()
    kernels = available_kernels()
    if forced:
        if forced not in kernels:
            raise RuntimeError(f"FLEETFLEX_KERNEL={forced!r} but only {sorted(kernels)} available")
        return forced
    return "cython" if "cython" in kernels else "python"


def _dual_objective(lp: LinearProgram, x: np.ndarray, y: np.ndarray, tol: float) -> float | None:
    """Value of the basis dual certificate, or None if it does not verify.

    For a ``<=`` system the row duals must be nonpositive; nonbasic
    structural variables contribute their reduced cost times the bound they
    sit on.  A certificate referencing an infinite bound with a nonzero
    reduced cost is invalid.
    """
    if y.shape != (lp.n_rows,):
        return None
    if np.any(y > tol):
        return None
    d = lp.c - lp.G.T @ y
    active = y != 0.0  # vacuous rows keep h = inf but carry zero dual
    if np.any(active & ~np.isfinite(lp.h)):
        return None
    total = float(y[active] @ lp.h[active]) if lp.n_rows else 0.0
    for j in range(lp.n_vars):
        dj = float(d[j])
        if dj > tol:
            if not np.isfinite(lp.lo[j]):
                return None
            total += dj * lp.lo[j]
        elif dj < -tol:
            if not np.isfinite(lp.hi[j]):
                return None
            total += dj * lp.hi[j]
    return total


def solve(
    lp: LinearProgram,
    feas_tol: float = FEAS_TOL,
    opt_tol: float = OPT_TOL,
    kernel: str | None = None,
    max_iter: int | None = None,
) -> LpSolution:
    """Solve a dense LP with the selected simplex kernel.

    Parameters
    ----------
    lp:
        The instance; see :class:`fleetflex.lp.model.LinearProgram`.
    feas_tol, opt_tol:
        Feasibility and reduced-cost tolerances.
    kernel:
        ``"python"``, ``"cython"``, or None for the environment default.
    max_iter:
        Pivot budget across both phases; defaults to ``1000 + 80*(m+n)``.
    """
    name = kernel if kernel is not None else active_kernel_name()
    kernels = available_kernels()
    if name not in kernels:
        raise RuntimeError(f"kernel {name!r} not available; have {sorted(kernels)}")
    mod = kernels[name]

    n = lp.n_vars
    # the only presolve: vacuous and identically-zero rows leave the system
    keep = []
    for i in range(lp.n_rows):
        if lp.h[i] == np.inf:
            continue
        if np.all(lp.G[i] == 0.0):
            if lp.h[i] < -feas_tol:
                x0 = np.clip(np.zeros(n), lp.lo, lp.hi)
                return LpSolution(
                    status=LpStatus.INFEASIBLE,
                    x=x0,
                    objective_value=float(lp.c @ x0),
                    max_primal_violation=lp.violation(x0),
                    iterations=0,
                    kernel=name,
                )
            continue
        keep.append(i)
    G = np.ascontiguousarray(lp.G[keep]) if len(keep) < lp.n_rows else lp.G
    h = lp.h[keep] if len(keep) < lp.n_rows else lp.h

    if max_iter is None:
        max_iter = 1000 + 80 * (G.shape[0] + n)

    code, x, y_kept, iters = mod.solve_kernel(
        np.asarray(G, dtype=float),
        np.asarray(h, dtype=float),
        lp.c,
        lp.lo,
        lp.hi,
        float(feas_tol),
        float(opt_tol),
        int(max_iter),
    )
    x = np.asarray(x, dtype=float)
    violation = lp.violation(x)
    status = LpStatus(code)
    dual = None
    if status is LpStatus.OPTIMAL:
        if violation > feas_tol or not np.all(np.isfinite(x)):
            status = LpStatus.FAILED
        else:
            y = np.zeros(lp.n_rows)
            y[keep] = np.asarray(y_kept, dtype=float)
            dual = _dual_objective(lp, x, y, opt_tol)
    return LpSolution(
        status=status,
        x=x,
        objective_value=float(lp.c @ x) if np.all(np.isfinite(x)) else float("nan"),
        max_primal_violation=violation,
        iterations=int(iters),
        kernel=name,
        dual_objective=dual,
    )
