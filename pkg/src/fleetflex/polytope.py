"""Battery and EV fleet operational envelopes.

A charging plan over ``T`` slots is the stacked vector ``p = [p_ch; p_dis]``
with charging power ``p_ch >= 0`` and discharging power ``p_dis <= 0`` (kW).
The feasible plans of one battery form the polytope ``{p : A p <= b}``, where
``A`` holds per-slot power bounds plus cumulative stored-energy bounds built
from a lower-triangular self-discharge kernel, and ``b`` stacks six
length-``T`` blocks::

    [p_max; 0; 0; -p_min; c_max rows; c_min rows]

``A`` depends only on shared fleet parameters (self-discharge retention and
conversion efficiencies), so a fleet of batteries sharing those parameters
aggregates by summing the per-battery ``b`` vectors row by row.  An EV is a
battery that is only plugged in on ``[t_arr, t_dep)`` and must hold a target
energy level from departure onward; :func:`build_b_ev` applies those window
adjustments.

Row-time convention: capacity row ``i`` (0-based) bounds the stored energy
after slot ``i``'s power has been applied.  The arrival level ``c_arr`` is
the energy just before the arrival slot, so the arrival slot's own power and
decay are already reflected in row ``t_arr``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FEAS_TOL",
    "BLOCK_NAMES",
    "TimeGrid",
    "FleetParams",
    "EvSessionParams",
    "ConstraintMatrix",
    "EnvelopeVector",
    "FeasibilityReport",
    "UnreachableTargetWarning",
    "DecayAdjustmentWarning",
    "block_slice",
    "row_block_name",
    "build_gamma",
    "build_A",
    "build_b_battery",
    "build_b_ev",
    "max_reachable_energy",
    "aggregate",
    "simulate_soc",
    "check_feasible",
]

FEAS_TOL = 1e-6

ENVELOPE_CSV_HEADER = ["slot", "p_max", "neg_p_min", "c_max_row", "c_min_row"]
ENVELOPE_FORMAT_VERSION = 1

BLOCK_NAMES = (
    "p_ch_upper",
    "p_ch_lower",
    "p_dis_upper",
    "p_dis_lower",
    "soc_upper",
    "soc_lower",
)


class UnreachableTargetWarning(UserWarning):
    """Departure energy target exceeded what the session window can deliver."""


class DecayAdjustmentWarning(UserWarning):
    """Post-departure minimum-energy rows were decayed to stay satisfiable.

    With retention ``alpha < 1`` the stored energy keeps decaying after the
    EV departs while no power can flow, so a constant post-departure floor
    would be violated by every plan.  The floor rows are therefore scaled by
    ``alpha**(t - t_dep)``, which keeps them exactly equivalent to requiring
    the target level at the departure slot.
    """


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform slot grid: ``T`` slots of ``delta_t`` hours each."""

    T: int = 96
    delta_t: float = 0.25

    def __post_init__(self) -> None:
        _require(int(self.T) == self.T and self.T >= 1, f"T must be a positive integer, got {self.T}")
        _require(self.delta_t > 0, f"delta_t must be positive, got {self.delta_t}")
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "delta_t", float(self.delta_t))

    @property
    def horizon_hours(self) -> float:
        return self.T * self.delta_t


@dataclass(frozen=True)
class FleetParams:
    """Battery parameters shared by every EV in one aggregation.

    Parameters
    ----------
    alpha:
        Per-slot self-discharge retention factor in ``(0, 1]``; stored
        energy scales by ``alpha`` each slot before power is applied.
    eta_in, eta_out:
        Charging and discharging conversion efficiencies in ``(0, 1]``.
    """

    alpha: float = 1.0
    eta_in: float = 1.0
    eta_out: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha", "eta_in", "eta_out"):
            v = float(getattr(self, name))
            _require(0.0 < v <= 1.0, f"{name} must be in (0, 1], got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class EvSessionParams:
    """One EV's availability window, rates, and energy targets on one horizon.

    Slots are 0-based; the EV may exchange power on ``[t_arr, t_dep)``.
    Power limits are ``p_max >= 0`` (charging, kW) and ``p_min <= 0``
    (discharging, kW).  Energy levels are in kWh: ``c_arr`` at arrival,
    ``c_dep`` required from departure onward, within ``[c_min, c_max]``.
    """

    t_arr: int
    t_dep: int
    p_max: float
    p_min: float
    c_max: float
    c_min: float
    c_arr: float
    c_dep: float

    def __post_init__(self) -> None:
        _require(int(self.t_arr) == self.t_arr and self.t_arr >= 0, f"t_arr must be a slot index >= 0, got {self.t_arr}")
        _require(int(self.t_dep) == self.t_dep and self.t_dep > self.t_arr, f"t_dep must exceed t_arr, got t_arr={self.t_arr}, t_dep={self.t_dep}")
        object.__setattr__(self, "t_arr", int(self.t_arr))
        object.__setattr__(self, "t_dep", int(self.t_dep))
        for name in ("p_max", "p_min", "c_max", "c_min", "c_arr", "c_dep"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _require(self.p_min <= 0.0 <= self.p_max, f"need p_min <= 0 <= p_max, got p_min={self.p_min}, p_max={self.p_max}")
        _require(self.c_min <= self.c_arr <= self.c_max, f"need c_min <= c_arr <= c_max, got {self.c_min}, {self.c_arr}, {self.c_max}")
        _require(self.c_min <= self.c_dep <= self.c_max, f"need c_min <= c_dep <= c_max, got {self.c_min}, {self.c_dep}, {self.c_max}")

    @property
    def n_avail(self) -> int:
        return self.t_dep - self.t_arr


def block_slice(name: str, T: int) -> slice:
    """Row slice of block ``name`` inside the stacked 6T-row system."""
    i = BLOCK_NAMES.index(name)
    return slice(i * T, (i + 1) * T)


def row_block_name(row: int, T: int) -> str:
    """Name of the block a 0-based row index falls in."""
    _require(0 <= row < 6 * T, f"row {row} outside [0, {6 * T})")
    return BLOCK_NAMES[row // T]


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """The 6T x 2T left-hand side of the envelope system ``A p <= b``.

    Rows come in six length-T blocks over the plan ``p = [p_ch; p_dis]``:
    upper/lower bounds on ``p_ch``, upper/lower bounds on ``p_dis``, then
    upper and lower cumulative stored-energy bounds through the decay
    kernel of :func:`build_gamma` scaled by ``eta_in * delta_t`` and
    ``eta_out * delta_t``.
    """

    data: np.ndarray
    grid: TimeGrid
    fleet: FleetParams

    def __post_init__(self) -> None:
        d = _readonly(self.data)
        _require(d.shape == (6 * self.grid.T, 2 * self.grid.T), f"A must be {6 * self.grid.T} x {2 * self.grid.T}, got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def block(self, name: str) -> np.ndarray:
        return self.data[block_slice(name, self.grid.T)]


@dataclass(frozen=True, eq=False)
class EnvelopeVector:
    """Right-hand side ``b`` of the envelope system, stored by block.

    The two all-zero blocks (charging nonnegativity, discharging
    nonpositivity) are implicit; :meth:`to_b` reinserts them.  The capacity
    blocks store the b-row values directly, so ``c_min_block`` entries are
    already in the ``<=`` orientation (floor rows may be negative when the
    departure target exceeds the decayed arrival level).
    """

    p_max_block: np.ndarray
    neg_p_min_block: np.ndarray
    c_max_block: np.ndarray
    c_min_block: np.ndarray
    grid: TimeGrid
    fleet: FleetParams

    def __post_init__(self) -> None:
        T = self.grid.T
        for name in ("p_max_block", "neg_p_min_block", "c_max_block", "c_min_block"):
            a = _readonly(getattr(self, name))
            _require(a.shape == (T,), f"{name} must have shape ({T},), got {a.shape}")
            object.__setattr__(self, name, a)
        _require(bool(np.all(self.p_max_block >= 0)), "p_max_block must be nonnegative")
        _require(bool(np.all(self.neg_p_min_block >= 0)), "neg_p_min_block must be nonnegative")

    @classmethod
    def zeros(cls, grid: TimeGrid, fleet: FleetParams) -> "EnvelopeVector":
        """Envelope of an empty fleet: only the zero plan is feasible."""
        z = np.zeros(grid.T)
        return cls(z, z, z, z, grid, fleet)

    def to_b(self) -> np.ndarray:
        """Assemble the full 6T-row right-hand side vector."""
        T = self.grid.T
        z = np.zeros(T)
        return np.concatenate([self.p_max_block, z, z, self.neg_p_min_block, self.c_max_block, self.c_min_block])

    def allclose(self, other: "EnvelopeVector", rtol: float = 1e-12, atol: float = 1e-12) -> bool:
        return (
            self.grid == other.grid
            and self.fleet == other.fleet
            and np.allclose(self.to_b(), other.to_b(), rtol=rtol, atol=atol)
        )

    # -- serialization ----------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        """Write the four per-slot columns (data only, no metadata)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ENVELOPE_CSV_HEADER)
            for i in range(self.grid.T):
                w.writerow([
                    i,
                    repr(float(self.p_max_block[i])),
                    repr(float(self.neg_p_min_block[i])),
                    repr(float(self.c_max_block[i])),
                    repr(float(self.c_min_block[i])),
                ])

    @classmethod
    def from_csv(cls, path: str | Path, grid: TimeGrid | None = None, fleet: FleetParams | None = None) -> "EnvelopeVector":
        """Read an envelope CSV; grid/fleet metadata must be supplied or defaulted."""
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if header is None or [h.strip() for h in header] != ENVELOPE_CSV_HEADER:
                raise ValueError(f"{path}: expected header {','.join(ENVELOPE_CSV_HEADER)}")
            rows = [row for row in r if row]
        cols = np.array([[float(v) for v in row[1:5]] for row in rows])
        if grid is None:
            grid = TimeGrid(T=len(rows))
        _require(len(rows) == grid.T, f"{path}: {len(rows)} rows but grid.T={grid.T}")
        if fleet is None:
            fleet = FleetParams()
        return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], grid, fleet)

    def to_json_dict(self) -> dict:
        return {
            "format_version": ENVELOPE_FORMAT_VERSION,
            "grid": {"T": self.grid.T, "delta_t": self.grid.delta_t},
            "fleet": {"alpha": self.fleet.alpha, "eta_in": self.fleet.eta_in, "eta_out": self.fleet.eta_out},
            "rows": {
                "p_max": [float(v) for v in self.p_max_block],
                "neg_p_min": [float(v) for v in self.neg_p_min_block],
                "c_max_row": [float(v) for v in self.c_max_block],
                "c_min_row": [float(v) for v in self.c_min_block],
            },
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EnvelopeVector":
        if doc.get("format_version") != ENVELOPE_FORMAT_VERSION:
            raise ValueError(f"unsupported envelope format_version {doc.get('format_version')!r}")
        grid = TimeGrid(**doc["grid"])
        fleet = FleetParams(**doc["fleet"])
        rows = doc["rows"]
        return cls(
            np.asarray(rows["p_max"], dtype=float),
            np.asarray(rows["neg_p_min"], dtype=float),
            np.asarray(rows["c_max_row"], dtype=float),
            np.asarray(rows["c_min_row"], dtype=float),
            grid,
            fleet,
        )

    @classmethod
    def read_json(cls, path: str | Path) -> "EnvelopeVector":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst-row summary of ``A p - b``; feasible iff within tolerance."""

    feasible: bool
    max_violation: float
    worst_row: int


def build_gamma(alpha: float, T: int) -> np.ndarray:
    """Lower-triangular decay kernel with ``gamma[t, tau] = alpha**(t - tau)``.

    Parameters
    ----------
    alpha:
        Per-slot retention factor in ``(0, 1]``.
    T:
        Number of slots.

    Returns
    -------
    numpy.ndarray
        ``T x T`` matrix, zero above the diagonal, ones on it.
    """
    _require(0.0 < alpha <= 1.0, f"alpha must be in (0, 1], got {alpha}")
    _require(int(T) == T and T >= 1, f"T must be a positive integer, got {T}")
    T = int(T)
    idx = np.arange(T)
    expo = idx[:, None] - idx[None, :]
    return np.where(expo >= 0, float(alpha) ** np.clip(expo, 0, None), 0.0)


def build_A(fleet: FleetParams, grid: TimeGrid) -> ConstraintMatrix:
    """Assemble the 6T x 2T envelope left-hand side for shared fleet parameters.

    Row blocks, in order: ``p_ch <= p_max``; ``-p_ch <= 0``; ``p_dis <= 0``;
    ``-p_dis <= -p_min``; cumulative energy upper rows; cumulative energy
    lower rows.  The energy rows apply the decay kernel to the per-slot
    energy inflow ``(eta_in * p_ch + eta_out * p_dis) * delta_t``.
    """
    T = grid.T
    gamma = build_gamma(fleet.alpha, T)
    ident = np.eye(T)
    zero = np.zeros((T, T))
    g_in = fleet.eta_in * grid.delta_t * gamma
    g_out = fleet.eta_out * grid.delta_t * gamma
    data = np.block([
        [ident, zero],
        [-ident, zero],
        [zero, ident],
        [zero, -ident],
        [g_in, g_out],
        [-g_in, -g_out],
    ])
    return ConstraintMatrix(data, grid, fleet)


def _as_power_vector(v, T: int, name: str) -> np.ndarray:
    a = np.broadcast_to(np.asarray(v, dtype=float), (T,)).copy()
    _require(np.all(np.isfinite(a)), f"{name} must be finite")
    return a


def build_b_battery(
    c0: float,
    c_max: float,
    c_min: float,
    p_max,
    p_min,
    fleet: FleetParams,
    grid: TimeGrid,
) -> EnvelopeVector:
    """Right-hand side for an always-connected battery starting at ``c0`` kWh.

    ``p_max`` / ``p_min`` may be scalars or length-T vectors (kW, with
    ``p_min <= 0``).  Capacity row ``t`` (1-based) bounds the stored energy
    by ``c_max - alpha**t * c0`` above and releases ``alpha**t * c0 - c_min``
    below.
    """
    _require(c_min <= c0 <= c_max, f"need c_min <= c0 <= c_max, got {c_min}, {c0}, {c_max}")
    T = grid.T
    pmax = _as_power_vector(p_max, T, "p_max")
    pmin = _as_power_vector(p_min, T, "p_min")
    _require(bool(np.all(pmax >= 0)), "p_max must be nonnegative")
    _require(bool(np.all(pmin <= 0)), "p_min must be nonpositive")
    apow = fleet.alpha ** np.arange(1, T + 1)
    return EnvelopeVector(
        p_max_block=pmax,
        neg_p_min_block=-pmin,
        c_max_block=c_max - apow * c0,
        c_min_block=apow * c0 - c_min,
        grid=grid,
        fleet=fleet,
    )


def max_reachable_energy(ev: EvSessionParams, fleet: FleetParams, grid: TimeGrid) -> float:
    """Highest stored energy attainable at departure, capped at ``c_max``.

    Charging at full rate over the ``n = t_dep - t_arr`` available slots
    yields ``alpha**n * c_arr + eta_in * p_max * delta_t * sum(alpha**j)``;
    anything up to ``c_max`` below that is reachable by backloading the
    charge, so the cap never conflicts with intermediate upper rows.
    """
    n = ev.t_dep - ev.t_arr
    geo = float(np.sum(fleet.alpha ** np.arange(n)))
    full = fleet.alpha**n * ev.c_arr + fleet.eta_in * ev.p_max * grid.delta_t * geo
    return min(ev.c_max, full)


def build_b_ev(ev: EvSessionParams, fleet: FleetParams, grid: TimeGrid) -> EnvelopeVector:
    """Right-hand side for one EV session on the horizon of ``grid``.

    Applies the availability-window adjustments to the battery vector:

    - power rows are zero outside ``[t_arr, t_dep)``;
    - energy upper rows are 0 through the arrival slot, track the decayed
      arrival level while connected, and hold the departure-row value
      afterward;
    - energy lower rows are 0 through the arrival slot, release down to
      ``c_min`` while connected, and from the departure row onward require
      the departure target ``c_dep`` (decayed when ``alpha < 1``, see
      :class:`DecayAdjustmentWarning`).

    An unreachable ``c_dep`` is clamped to :func:`max_reachable_energy`
    with an :class:`UnreachableTargetWarning`; the returned envelope is
    always nonempty.
    """
    T = grid.T
    _require(ev.t_dep <= T, f"t_dep={ev.t_dep} beyond grid T={T}")
    reachable = max_reachable_energy(ev, fleet, grid)
    c_dep = ev.c_dep
    if c_dep > reachable + 1e-12:
        warnings.warn(
            f"c_dep={c_dep:g} kWh unreachable within the session window; clamped to {reachable:g} kWh",
            UnreachableTargetWarning,
            stacklevel=2,
        )
        c_dep = reachable

    slots = np.arange(T)
    avail = (slots >= ev.t_arr) & (slots < ev.t_dep)
    p_max_block = np.where(avail, ev.p_max, 0.0)
    neg_p_min_block = np.where(avail, -ev.p_min, 0.0)

    tt = np.arange(1, T + 1)  # row times: row i bounds energy after slot i
    alpha = fleet.alpha
    c_max_block = np.zeros(T)
    c_min_block = np.zeros(T)

    connected = (tt > ev.t_arr) & (tt <= ev.t_dep)
    after = tt > ev.t_dep
    c_max_block[connected] = ev.c_max - alpha ** (tt[connected] - ev.t_arr) * ev.c_arr
    c_max_block[after] = ev.c_max - alpha ** (ev.t_dep - ev.t_arr) * ev.c_arr

    strictly_connected = (tt > ev.t_arr) & (tt < ev.t_dep)
    from_dep = tt >= ev.t_dep
    c_min_block[strictly_connected] = alpha ** (tt[strictly_connected] - ev.t_arr) * ev.c_arr - ev.c_min
    dep_row = alpha ** (ev.t_dep - ev.t_arr) * ev.c_arr - c_dep
    c_min_block[from_dep] = alpha ** (tt[from_dep] - ev.t_dep) * dep_row
    if alpha < 1.0 and ev.t_dep < T:
        warnings.warn(
            "post-departure minimum-energy rows decayed by alpha**(t - t_dep) to stay satisfiable",
            DecayAdjustmentWarning,
            stacklevel=2,
        )

    return EnvelopeVector(p_max_block, neg_p_min_block, c_max_block, c_min_block, grid, fleet)


def aggregate(envelopes: list[EnvelopeVector]) -> EnvelopeVector:
    """Sum envelope vectors row by row into the fleet envelope.

    All inputs must share one grid and one fleet parameterization.
    Summation is in fixed left-to-right list order so results are bitwise
    reproducible for a given input ordering.
    """
    _require(len(envelopes) > 0, "aggregate needs at least one envelope")
    first = envelopes[0]
    for e in envelopes[1:]:
        if e.grid != first.grid or e.fleet != first.fleet:
            raise ValueError("cannot aggregate envelopes with mixed grids or fleet parameters")
    pm = first.p_max_block.copy()
    npm = first.neg_p_min_block.copy()
    cmax = first.c_max_block.copy()
    cmin = first.c_min_block.copy()
    for e in envelopes[1:]:
        pm = pm + e.p_max_block
        npm = npm + e.neg_p_min_block
        cmax = cmax + e.c_max_block
        cmin = cmin + e.c_min_block
    return EnvelopeVector(pm, npm, cmax, cmin, first.grid, first.fleet)


def simulate_soc(
    ev: EvSessionParams,
    fleet: FleetParams,
    grid: TimeGrid,
    p_ch,
    p_dis,
) -> np.ndarray:
    """Step the stored-energy recursion for one EV under a given plan.

    ``soc[t] = alpha * soc[t-1] + (eta_in * p_ch[t] + eta_out * p_dis[t]) * delta_t``
    anchored at ``c_arr`` just before the arrival slot.  Power outside the
    availability window is forced to zero; before arrival the reported level
    is held at ``c_arr``, after departure it keeps decaying with ``alpha``.
    This is the ground-truth reading of the cumulative energy rows and is
    used as the independent oracle in feasibility tests.

    Returns
    -------
    numpy.ndarray
        Length-T stored energy trajectory in kWh; entry ``t`` is the level
        after slot ``t``'s power has been applied.
    """
    T = grid.T
    _require(ev.t_dep <= T, f"t_dep={ev.t_dep} beyond grid T={T}")
    pc = _as_power_vector(p_ch, T, "p_ch")
    pd = _as_power_vector(p_dis, T, "p_dis")
    soc = np.empty(T)
    level = ev.c_arr
    for t in range(T):
        if t < ev.t_arr:
            soc[t] = ev.c_arr
            continue
        inflow = 0.0
        if ev.t_arr <= t < ev.t_dep:
            inflow = (fleet.eta_in * pc[t] + fleet.eta_out * pd[t]) * grid.delta_t
        level = fleet.alpha * level + inflow
        soc[t] = level
    return soc


def check_feasible(A: ConstraintMatrix, b: EnvelopeVector, p, tol: float = FEAS_TOL) -> FeasibilityReport:
    """Evaluate ``A p - b`` and report the worst row.

    ``p`` is the stacked plan ``[p_ch; p_dis]`` of length 2T.  Feasible
    means no row exceeds ``tol`` (kW for power rows, kWh for energy rows).
    """
    _require(A.grid == b.grid, "A and b built on different grids")
    _require(A.fleet == b.fleet, "A and b built with different fleet parameters")
    pv = np.asarray(p, dtype=float)
    _require(pv.shape == (A.cols,), f"p must have shape ({A.cols},), got {pv.shape}")
    resid = A.data @ pv - b.to_b()
    worst = int(np.argmax(resid))
    worst_val = float(resid[worst])
    return FeasibilityReport(feasible=worst_val <= tol, max_violation=worst_val, worst_row=worst)
