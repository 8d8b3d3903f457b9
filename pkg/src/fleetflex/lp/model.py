"""Dense linear-program instance and solution containers.

Problems are stated as ``minimize c @ x`` subject to ``G @ x <= h`` and box
bounds ``lo <= x <= hi``; bound entries may be infinite and a variable with
both bounds infinite is free.  This canonical form hosts every optimization
in the package: envelope rows enter through ``G`` or, for plain per-slot
power limits, directly through the box bounds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = ["LpStatus", "LinearProgram", "LpSolution", "dump_lp"]

# status codes shared with the kernels
CODE_OPTIMAL = 0
CODE_INFEASIBLE = 1
CODE_UNBOUNDED = 2
CODE_FAILED = 3


class LpStatus(enum.Enum):
    OPTIMAL = CODE_OPTIMAL
    INFEASIBLE = CODE_INFEASIBLE
    UNBOUNDED = CODE_UNBOUNDED
    FAILED = CODE_FAILED


def _as_float_array(v, name: str) -> np.ndarray:
    a = np.array(v, dtype=float, copy=True)
    a.flags.writeable = False
    if np.isnan(a).any():
        raise ValueError(f"{name} contains NaN")
    return a


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``minimize c @ x  s.t.  G @ x <= h,  lo <= x <= hi``."""

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        c = _as_float_array(self.c, "c")
        G = _as_float_array(self.G, "G")
        h = _as_float_array(self.h, "h")
        lo = _as_float_array(self.lo, "lo")
        hi = _as_float_array(self.hi, "hi")
        if c.ndim != 1:
            raise ValueError("c must be a vector")
        n = c.shape[0]
        if G.ndim != 2 or G.shape[1] != n:
            raise ValueError(f"G must be m x {n}, got {G.shape}")
        m = G.shape[0]
        if h.shape != (m,):
            raise ValueError(f"h must have shape ({m},), got {h.shape}")
        if lo.shape != (n,) or hi.shape != (n,):
            raise ValueError(f"bounds must have shape ({n},)")
        if not np.all(np.isfinite(c)):
            raise ValueError("c must be finite")
        if not np.all(np.isfinite(G)):
            raise ValueError("G must be finite")
        if np.any(h == -np.inf):
            raise ValueError("h entries must not be -inf")
        if np.any(lo > hi):
            raise ValueError("crossed bounds: lo > hi")
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("lo must be < +inf and hi > -inf")
        for name, val in (("c", c), ("G", G), ("h", h), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, name, val)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 if feasible)."""
        xv = np.asarray(x, dtype=float)
        worst = 0.0
        if self.n_rows:
            resid = self.G @ xv - self.h
            finite = resid[np.isfinite(self.h)]
            if finite.size:
                worst = max(worst, float(finite.max()))
        worst = max(worst, float(np.max(self.lo - xv, initial=0.0)))
        worst = max(worst, float(np.max(xv - self.hi, initial=0.0)))
        return worst


@dataclass(frozen=True, eq=False)
class LpSolution:
    """Solver output; ``x`` is the optimizer only when status is OPTIMAL.

    For INFEASIBLE the vector is the least-infeasible iterate found, for
    UNBOUNDED a feasible point on an improving ray, for FAILED whatever the
    kernel last held.  ``dual_objective`` is populated only when an optimal
    basis provided a clean dual certificate.
    """

    status: LpStatus
    x: np.ndarray
    objective_value: float
    max_primal_violation: float
    iterations: int
    kernel: str
    dual_objective: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _as_float_array(np.nan_to_num(self.x, nan=0.0), "x"))


def dump_lp(lp: LinearProgram, max_rows: int = 200) -> str:
    """Human-readable text form of an instance, for triage."""

    def term(coef: float, j: int) -> str:
        return f"{coef:+g}*x{j}"

    lines = ["minimize " + " ".join(term(cj, j) for j, cj in enumerate(lp.c) if cj != 0.0)]
    if lines[0] == "minimize ":
        lines[0] = "minimize 0"
    lines.append("subject to")
    for i in range(min(lp.n_rows, max_rows)):
        row = " ".join(term(g, j) for j, g in enumerate(lp.G[i]) if g != 0.0) or "0"
        lines.append(f"  r{i}: {row} <= {lp.h[i]:g}")
    if lp.n_rows > max_rows:
        lines.append(f"  ... {lp.n_rows - max_rows} more rows")
    lines.append("bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.lo[j], lp.hi[j]
        if lo == -np.inf and hi == np.inf:
            lines.append(f"  x{j} free")
        else:
            lines.append(f"  {lo:g} <= x{j} <= {hi:g}")
    return "\n".join(lines) + "\n"
