"""Fleet scheduling against prices and operating limits, plus disaggregation.

All problems share one decision layout: the stacked plan ``[p_ch; p_dis]``
over the horizon, bounded per slot by the envelope's power blocks and
constrained by its two cumulative-energy row families.  Costs are energy
prices (currency per kWh) applied to per-slot energy ``power * delta_t``;
with ``p_dis <= 0`` the export price term is revenue.

The upward-flexibility problem maximizes a scalar uplift of net injection
relative to a baseline plan, sustained over every slot of a window: the
baseline plan itself is always a candidate with zero uplift, so the optimum
is nonnegative whenever the baseline is feasible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fleetflex.lp import LinearProgram, LpStatus, solve
from fleetflex.lp.solver import FEAS_TOL
from fleetflex.polytope import (
    ConstraintMatrix,
    EnvelopeVector,
    FleetParams,
    TimeGrid,
    build_gamma,
    check_feasible,
    row_block_name,
)

__all__ = [
    "SchedulingError",
    "PriceSignal",
    "DoeSignal",
    "Schedule",
    "FlexResult",
    "DisaggregationResult",
    "default_tariff",
    "baseline_schedule",
    "max_upward_flex",
    "doe_schedule",
    "disaggregate",
]

SCHEDULE_CSV_HEADER = ["slot", "p_ch_kw", "p_dis_kw", "net_kw", "soc_kwh"]
PRICE_CSV_HEADER = ["slot", "lambda_imp", "lambda_exp"]
DOE_CSV_HEADER = ["slot", "p_doe_imp_kw", "p_doe_exp_kw"]


class SchedulingError(RuntimeError):
    """Raised when a scheduling problem has no feasible plan."""

    def __init__(self, msg: str, worst_row: int | None = None, slots: list[int] | None = None):
        super().__init__(msg)
        self.worst_row = worst_row
        self.slots = slots or []


def _read_columns(path: str | Path, header: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r, None)
        if got is None or [h.strip() for h in got] != header:
            raise ValueError(f"{path}: expected header {','.join(header)}")
        rows = [row for row in r if row]
    return np.array([[float(v) for v in row[1 : len(header)]] for row in rows])


def _write_columns(path: str | Path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(columns[0])):
            w.writerow([i] + [repr(float(col[i])) for col in columns])


@dataclass(frozen=True, eq=False)
class PriceSignal:
    """Import and export energy prices per slot, currency per kWh."""

    lambda_imp: np.ndarray
    lambda_exp: np.ndarray
    grid: TimeGrid

    def __post_init__(self) -> None:
        for name in ("lambda_imp", "lambda_exp"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            if a.shape != (self.grid.T,):
                raise ValueError(f"{name} must have shape ({self.grid.T},), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, a)

    def to_csv(self, path: str | Path) -> None:
        _write_columns(path, PRICE_CSV_HEADER, [self.lambda_imp, self.lambda_exp])

    @classmethod
    def from_csv(cls, path: str | Path, grid: TimeGrid | None = None) -> "PriceSignal":
        cols = _read_columns(path, PRICE_CSV_HEADER)
        if grid is None:
            grid = TimeGrid(T=len(cols))
        return cls(cols[:, 0], cols[:, 1], grid)


@dataclass(frozen=True, eq=False)
class DoeSignal:
    """Per-slot import ceiling (>= 0) and export floor (<= 0) in kW."""

    p_doe_imp: np.ndarray
    p_doe_exp: np.ndarray
    grid: TimeGrid

    def __post_init__(self) -> None:
        imp = np.array(self.p_doe_imp, dtype=float)
        exp = np.array(self.p_doe_exp, dtype=float)
        for name, a in (("p_doe_imp", imp), ("p_doe_exp", exp)):
            if a.shape != (self.grid.T,):
                raise ValueError(f"{name} must have shape ({self.grid.T},), got {a.shape}")
            a.flags.writeable = False
        if np.any(imp < 0):
            raise ValueError("p_doe_imp must be nonnegative")
        if np.any(exp > 0):
            raise ValueError("p_doe_exp must be nonpositive")
        object.__setattr__(self, "p_doe_imp", imp)
        object.__setattr__(self, "p_doe_exp", exp)

    @classmethod
    def unlimited(cls, grid: TimeGrid) -> "DoeSignal":
        return cls(np.full(grid.T, np.inf), np.full(grid.T, -np.inf), grid)

    def to_csv(self, path: str | Path) -> None:
        _write_columns(path, DOE_CSV_HEADER, [self.p_doe_imp, self.p_doe_exp])

    @classmethod
    def from_csv(cls, path: str | Path, grid: TimeGrid | None = None) -> "DoeSignal":
        cols = _read_columns(path, DOE_CSV_HEADER)
        if grid is None:
            grid = TimeGrid(T=len(cols))
        return cls(cols[:, 0], cols[:, 1], grid)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-slot charging/discharging plan with derived net power and cost."""

    p_ch: np.ndarray
    p_dis: np.ndarray
    grid: TimeGrid
    fleet: FleetParams

    def __post_init__(self) -> None:
        for name in ("p_ch", "p_dis"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            if a.shape != (self.grid.T,):
                raise ValueError(f"{name} must have shape ({self.grid.T},), got {a.shape}")
            object.__setattr__(self, name, a)
        if np.any(self.p_ch < -FEAS_TOL):
            raise ValueError("p_ch must be nonnegative")
        if np.any(self.p_dis > FEAS_TOL):
            raise ValueError("p_dis must be nonpositive")

    @property
    def net(self) -> np.ndarray:
        return self.p_ch + self.p_dis

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.p_ch, self.p_dis])

    def cost(self, prices: PriceSignal) -> float:
        """Import cost minus export revenue over the horizon."""
        dt = self.grid.delta_t
        return float(np.sum((prices.lambda_imp * self.p_ch + prices.lambda_exp * self.p_dis) * dt))

    def energy_added(self) -> np.ndarray:
        """Cumulative stored energy relative to the start, decay applied.

        For a single battery this is the trajectory above its (decayed)
        starting level; for an aggregate plan it is the fleet total on the
        same convention.  It is exactly the quantity the cumulative-energy
        rows bound.
        """
        gamma = build_gamma(self.fleet.alpha, self.grid.T)
        inflow = (self.fleet.eta_in * self.p_ch + self.fleet.eta_out * self.p_dis) * self.grid.delta_t
        return gamma @ inflow

    @classmethod
    def zero(cls, grid: TimeGrid, fleet: FleetParams) -> "Schedule":
        z = np.zeros(grid.T)
        return cls(z, z, grid, fleet)

    def to_csv(self, path: str | Path) -> None:
        _write_columns(
            path,
            SCHEDULE_CSV_HEADER,
            [self.p_ch, self.p_dis, self.net, self.energy_added()],
        )

    @classmethod
    def from_csv(cls, path: str | Path, grid: TimeGrid | None = None, fleet: FleetParams | None = None) -> "Schedule":
        cols = _read_columns(path, SCHEDULE_CSV_HEADER)
        if grid is None:
            grid = TimeGrid(T=len(cols))
        if fleet is None:
            fleet = FleetParams()
        return cls(cols[:, 0], cols[:, 1], grid, fleet)


@dataclass(frozen=True, eq=False)
class FlexResult:
    """Sustained upward-flexibility capacity over a window, in kW."""

    flex: float
    schedule: Schedule
    window: tuple[int, int]


@dataclass(frozen=True, eq=False)
class DisaggregationResult:
    """Per-EV feasible plans approximating an aggregate plan."""

    schedules: list
    residual: float
    norm: str


def default_tariff(
    grid: TimeGrid,
    offpeak: float = 0.10,
    peak: float = 0.30,
    export: float = 0.05,
    peak_hours: tuple[float, float] = (16.0, 20.0),
) -> PriceSignal:
    """Two-level import tariff with an evening peak and a flat export price."""
    hours = np.arange(grid.T) * grid.delta_t
    lam_imp = np.where((hours >= peak_hours[0]) & (hours < peak_hours[1]), peak, offpeak)
    lam_exp = np.full(grid.T, export)
    return PriceSignal(lam_imp, lam_exp, grid)


def _power_bounds(b: EnvelopeVector) -> tuple[np.ndarray, np.ndarray]:
    T = b.grid.T
    lo = np.concatenate([np.zeros(T), -b.neg_p_min_block])
    hi = np.concatenate([b.p_max_block, np.zeros(T)])
    return lo, hi


def _soc_rows(A: ConstraintMatrix, b: EnvelopeVector) -> tuple[np.ndarray, np.ndarray]:
    G = np.vstack([A.block("soc_upper"), A.block("soc_lower")])
    h = np.concatenate([b.c_max_block, b.c_min_block])
    return G, h


def _check_pair(A: ConstraintMatrix, b: EnvelopeVector) -> None:
    if A.grid != b.grid or A.fleet != b.fleet:
        raise ValueError("constraint matrix and envelope built on different grids or fleet parameters")


def _raise_infeasible(A: ConstraintMatrix, b: EnvelopeVector, x: np.ndarray, context: str, slots: list[int] | None = None):
    report = check_feasible(A, b, x)
    name = row_block_name(report.worst_row, A.grid.T)
    extra = f"; tightened slots {slots}" if slots else ""
    raise SchedulingError(
        f"{context}: no feasible plan (worst row {report.worst_row} in block {name}, "
        f"violation {report.max_violation:.3g}){extra}",
        worst_row=report.worst_row,
        slots=slots,
    )


def _schedule_from_lp(x: np.ndarray, A: ConstraintMatrix, b: EnvelopeVector) -> Schedule:
    T = A.grid.T
    p_ch = np.clip(x[:T], 0.0, None)  # strip solver round-off at the sign bound
    p_dis = np.clip(x[T : 2 * T], None, 0.0)
    sched = Schedule(p_ch, p_dis, A.grid, A.fleet)
    report = check_feasible(A, b, sched.stacked())
    if not report.feasible:
        raise SchedulingError(
            f"solver returned an infeasible plan (violation {report.max_violation:.3g}); "
            "this indicates a solver failure",
            worst_row=report.worst_row,
        )
    return sched


def baseline_schedule(b_agg: EnvelopeVector, A: ConstraintMatrix, prices: PriceSignal) -> Schedule:
    """Cost-minimal plan against day-ahead prices.

    Minimizes ``sum((lambda_imp * p_ch + lambda_exp * p_dis) * delta_t)``
    subject to the envelope; discharging earns the export price.
    """
    _check_pair(A, b_agg)
    if prices.grid != A.grid:
        raise ValueError("prices built on a different grid")
    T = A.grid.T
    dt = A.grid.delta_t
    G, h = _soc_rows(A, b_agg)
    lo, hi = _power_bounds(b_agg)
    c = np.concatenate([prices.lambda_imp, prices.lambda_exp]) * dt
    sol = solve(LinearProgram(c=c, G=G, h=h, lo=lo, hi=hi))
    if sol.status is LpStatus.INFEASIBLE:
        _raise_infeasible(A, b_agg, sol.x, "baseline scheduling")
    if sol.status is not LpStatus.OPTIMAL:
        raise SchedulingError(f"baseline scheduling: solver status {sol.status.name}")
    return _schedule_from_lp(sol.x, A, b_agg)


def max_upward_flex(
    b_agg: EnvelopeVector,
    A: ConstraintMatrix,
    baseline: Schedule,
    window: tuple[int, int],
) -> FlexResult:
    """Largest net-power reduction sustainable over every slot of a window.

    Maximizes scalar ``flex`` subject to the envelope and, for each slot of
    the inclusive window, ``baseline_net(t) - net(t) >= flex``.  The
    baseline plan is feasible with ``flex = 0``, so the result is never
    meaningfully negative; values within the feasibility tolerance of zero
    are reported as zero.
    """
    _check_pair(A, b_agg)
    t_s, t_e = int(window[0]), int(window[1])
    T = A.grid.T
    if not (0 <= t_s <= t_e < T):
        raise ValueError(f"window {window} outside [0, {T})")
    G, h = _soc_rows(A, b_agg)
    lo, hi = _power_bounds(b_agg)
    n = 2 * T + 1
    width = t_e - t_s + 1
    Gw = np.zeros((G.shape[0] + width, n))
    Gw[: G.shape[0], : 2 * T] = G
    hw = np.concatenate([h, np.zeros(width)])
    base_net = baseline.net
    for k, t in enumerate(range(t_s, t_e + 1)):
        row = G.shape[0] + k
        Gw[row, t] = 1.0  # p_ch(t)
        Gw[row, T + t] = 1.0  # p_dis(t)
        Gw[row, 2 * T] = 1.0  # flex
        hw[row] = base_net[t]
    c = np.zeros(n)
    c[2 * T] = -1.0
    low = np.concatenate([lo, [-np.inf]])
    high = np.concatenate([hi, [np.inf]])
    sol = solve(LinearProgram(c=c, G=Gw, h=hw, lo=low, hi=high))
    if sol.status is not LpStatus.OPTIMAL:
        raise SchedulingError(
            f"flexibility problem ended with status {sol.status.name}; "
            "it must be feasible whenever the baseline plan is"
        )
    flex = float(sol.x[2 * T])
    if flex < -FEAS_TOL:
        raise SchedulingError(f"flexibility optimum {flex:.3g} below zero; baseline plan was not feasible")
    flex = max(flex, 0.0)
    return FlexResult(flex=flex, schedule=_schedule_from_lp(sol.x[: 2 * T], A, b_agg), window=(t_s, t_e))


def doe_schedule(
    b_agg: EnvelopeVector,
    A: ConstraintMatrix,
    prices: PriceSignal,
    doe: DoeSignal,
) -> Schedule:
    """Cost-minimal plan under per-slot import/export operating limits.

    Same objective as :func:`baseline_schedule`; the limits tighten the
    per-slot power bounds (``p_ch <= import ceiling``, ``p_dis >= export
    floor``), which is equivalent to appending the two limit row families.
    """
    _check_pair(A, b_agg)
    if doe.grid != A.grid:
        raise ValueError("operating limits built on a different grid")
    T = A.grid.T
    dt = A.grid.delta_t
    G, h = _soc_rows(A, b_agg)
    lo, hi = _power_bounds(b_agg)
    hi_t = hi.copy()
    lo_t = lo.copy()
    hi_t[:T] = np.minimum(hi[:T], doe.p_doe_imp)
    lo_t[T:] = np.maximum(lo[T:], doe.p_doe_exp)
    c = np.concatenate([prices.lambda_imp, prices.lambda_exp]) * dt
    sol = solve(LinearProgram(c=c, G=G, h=h, lo=lo_t, hi=hi_t))
    if sol.status is LpStatus.INFEASIBLE:
        tightened = np.flatnonzero(doe.p_doe_imp < b_agg.p_max_block).tolist()
        _raise_infeasible(A, b_agg, sol.x, "scheduling under operating limits", slots=tightened)
    if sol.status is not LpStatus.OPTIMAL:
        raise SchedulingError(f"scheduling under operating limits: solver status {sol.status.name}")
    return _schedule_from_lp(sol.x, A, b_agg)


def disaggregate(
    p_agg: Schedule,
    A: ConstraintMatrix,
    envelopes: list,
    norm: str = "l1",
) -> DisaggregationResult:
    """Split an aggregate plan into per-EV feasible plans.

    Minimizes the gap between the aggregate plan and the sum of per-EV
    plans, each constrained by its own envelope.  ``norm="l1"`` minimizes
    the summed absolute gap over both power channels (the default, kept
    linear via one slack per channel-slot); ``norm="linf"`` minimizes the
    worst single gap.  Per-EV feasibility holds unconditionally; the
    residual is positive exactly when the aggregate plan is not
    decomposable.
    """
    if norm not in ("l1", "linf"):
        raise ValueError(f"norm must be 'l1' or 'linf', got {norm!r}")
    if not envelopes:
        raise ValueError("need at least one envelope")
    _check_pair(A, envelopes[0])
    for e in envelopes:
        if e.grid != A.grid or e.fleet != A.fleet:
            raise ValueError("all envelopes must share the aggregate grid and fleet parameters")
    T = A.grid.T
    N = len(envelopes)
    n_gap = 2 * T if norm == "l1" else 1
    n = N * 2 * T + n_gap
    target = p_agg.stacked()

    Gs, hs = zip(*(_soc_rows(A, b) for b in envelopes))
    m_soc = 2 * T * N
    G = np.zeros((m_soc + 4 * T, n))
    h = np.empty(m_soc + 4 * T)
    for i in range(N):
        G[2 * T * i : 2 * T * (i + 1), 2 * T * i : 2 * T * (i + 1)] = Gs[i]
        h[2 * T * i : 2 * T * (i + 1)] = hs[i]
    # gap rows: +/-(target_k - sum_i p_i[k]) <= u_k
    for k in range(2 * T):
        up = m_soc + 2 * k
        dn = up + 1
        for i in range(N):
            G[up, 2 * T * i + k] = -1.0
            G[dn, 2 * T * i + k] = 1.0
        ucol = N * 2 * T + (k if norm == "l1" else 0)
        G[up, ucol] = -1.0
        G[dn, ucol] = -1.0
        h[up] = -target[k]
        h[dn] = target[k]

    lo = np.empty(n)
    hi = np.empty(n)
    for i, b in enumerate(envelopes):
        lo_i, hi_i = _power_bounds(b)
        lo[2 * T * i : 2 * T * (i + 1)] = lo_i
        hi[2 * T * i : 2 * T * (i + 1)] = hi_i
    lo[N * 2 * T :] = 0.0
    hi[N * 2 * T :] = np.inf
    c = np.zeros(n)
    c[N * 2 * T :] = 1.0

    sol = solve(LinearProgram(c=c, G=G, h=h, lo=lo, hi=hi))
    if sol.status is not LpStatus.OPTIMAL:
        if sol.status is LpStatus.INFEASIBLE:
            for i, b in enumerate(envelopes):
                G_i, h_i = _soc_rows(A, b)
                lo_i, hi_i = _power_bounds(b)
                probe = solve(LinearProgram(c=np.zeros(2 * T), G=G_i, h=h_i, lo=lo_i, hi=hi_i))
                if probe.status is LpStatus.INFEASIBLE:
                    raise SchedulingError(f"EV {i}: envelope admits no feasible plan")
        raise SchedulingError(f"disaggregation solver status {sol.status.name}")

    schedules = [_schedule_from_lp(sol.x[2 * T * i : 2 * T * (i + 1)], A, envelopes[i]) for i in range(N)]
    total = np.zeros(2 * T)
    for s in schedules:
        total = total + s.stacked()
    gap = target - total
    residual = float(np.abs(gap).sum()) if norm == "l1" else float(np.abs(gap).max())
    return DisaggregationResult(schedules=schedules, residual=residual, norm=norm)
