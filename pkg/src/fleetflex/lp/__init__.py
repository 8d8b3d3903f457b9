"""Self-contained dense LP solver with interchangeable simplex kernels."""

from fleetflex.lp.model import LinearProgram, LpSolution, LpStatus, dump_lp
from fleetflex.lp.solver import (
    FEAS_TOL,
    OPT_TOL,
    active_kernel_name,
    available_kernels,
    solve,
)

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "dump_lp",
    "solve",
    "available_kernels",
    "active_kernel_name",
    "FEAS_TOL",
    "OPT_TOL",
]
