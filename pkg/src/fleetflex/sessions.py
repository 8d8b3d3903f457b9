"""Charging-session ingestion, capacity approximation, and daily envelopes.

Sessions arrive as timestamped plug-in/plug-out records.  Records missing
arrival/target levels get them approximated from consumed energy against
battery capacity.  Sessions crossing midnight are split into per-day
records whose targets grow proportionally with the slot count of each day,
so the telescoped requirement over all days equals the original one.  Each
calendar day then aggregates its sessions into one fleet envelope.

Session CSV schema (header required):
``ev_id,plug_in,plug_out,c_cons_kwh,c_max_kwh,p_max_kw[,p_min_kw,c_arr_kwh,c_dep_kwh]``
with ISO-8601 timestamps.  Unknown extra columns are ignored; the three
trailing columns are optional and may be blank per row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from fleetflex.polytope import (
    EnvelopeVector,
    EvSessionParams,
    FleetParams,
    TimeGrid,
    aggregate,
    build_b_ev,
)

__all__ = [
    "ChargingSession",
    "CleaningReport",
    "SessionFormatError",
    "SyntheticFleetConfig",
    "DailyEnvelopeSeries",
    "parse_sessions",
    "write_sessions_csv",
    "approximate_capacities",
    "assign_capacities",
    "split_multiday",
    "sessions_to_daily_envelopes",
    "generate_synthetic_fleet",
]

MANDATORY_COLUMNS = ["ev_id", "plug_in", "plug_out", "c_cons_kwh", "c_max_kwh", "p_max_kw"]
OPTIONAL_COLUMNS = ["p_min_kw", "c_arr_kwh", "c_dep_kwh"]
MANIFEST_VERSION = 1


class SessionFormatError(ValueError):
    """File-level schema problem: the input cannot be interpreted at all."""


@dataclass(frozen=True)
class ChargingSession:
    ev_id: str
    plug_in: datetime
    plug_out: datetime
    c_cons: float
    c_max: float
    p_max: float
    p_min: float | None = None
    c_arr: float | None = None
    c_dep: float | None = None

    def __post_init__(self) -> None:
        for name in ("c_cons", "c_max", "p_max", "p_min", "c_arr", "c_dep"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, float(value))


@dataclass
class CleaningReport:
    """Row accounting for one parse: kept + dropped + errored = total."""

    n_rows: int = 0
    n_kept: int = 0
    dropped_consumption: int = 0
    dropped_duration: int = 0
    row_errors: list = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return self.dropped_consumption + self.dropped_duration

    def consistent(self) -> bool:
        return self.n_rows == self.n_kept + self.n_dropped + len(self.row_errors)


def _parse_float(raw: str | None, column: str, required: bool) -> float | None:
    if raw is None or raw.strip() == "":
        if required:
            raise ValueError(f"missing value in column {column}")
        return None
    return float(raw)


def parse_sessions(path: str | Path) -> tuple[list[ChargingSession], CleaningReport]:
    """Read and clean a session CSV.

    Rows with nonpositive duration or consumption above capacity are
    dropped and counted; rows with unparseable fields are collected as
    row-level errors.  A missing mandatory column aborts with
    :class:`SessionFormatError` naming the column.
    """
    report = CleaningReport()
    sessions: list[ChargingSession] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in MANDATORY_COLUMNS:
            if col not in header:
                raise SessionFormatError(f"missing mandatory column {col!r}")
        for line_no, row in enumerate(reader, start=2):
            report.n_rows += 1
            try:
                plug_in = datetime.fromisoformat(row["plug_in"])
                plug_out = datetime.fromisoformat(row["plug_out"])
                c_cons = _parse_float(row["c_cons_kwh"], "c_cons_kwh", required=True)
                c_max = _parse_float(row["c_max_kwh"], "c_max_kwh", required=True)
                p_max = _parse_float(row["p_max_kw"], "p_max_kw", required=True)
                p_min = _parse_float(row.get("p_min_kw"), "p_min_kw", required=False)
                c_arr = _parse_float(row.get("c_arr_kwh"), "c_arr_kwh", required=False)
                c_dep = _parse_float(row.get("c_dep_kwh"), "c_dep_kwh", required=False)
                if c_cons < 0:
                    raise ValueError("c_cons_kwh must be nonnegative")
                if c_max <= 0:
                    raise ValueError("c_max_kwh must be positive")
                if p_max <= 0:
                    raise ValueError("p_max_kw must be positive")
            except (ValueError, TypeError) as exc:
                report.row_errors.append((line_no, str(exc)))
                continue
            if plug_out <= plug_in:
                report.dropped_duration += 1
                continue
            if c_cons > c_max:
                report.dropped_consumption += 1
                continue
            sessions.append(
                ChargingSession(
                    ev_id=row["ev_id"],
                    plug_in=plug_in,
                    plug_out=plug_out,
                    c_cons=c_cons,
                    c_max=c_max,
                    p_max=p_max,
                    p_min=p_min,
                    c_arr=c_arr,
                    c_dep=c_dep,
                )
            )
            report.n_kept += 1
    return sessions, report


def write_sessions_csv(sessions: list[ChargingSession], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANDATORY_COLUMNS + OPTIONAL_COLUMNS)
        for s in sessions:
            w.writerow(
                [
                    s.ev_id,
                    s.plug_in.isoformat(),
                    s.plug_out.isoformat(),
                    repr(float(s.c_cons)),
                    repr(float(s.c_max)),
                    repr(float(s.p_max)),
                    "" if s.p_min is None else repr(float(s.p_min)),
                    "" if s.c_arr is None else repr(float(s.c_arr)),
                    "" if s.c_dep is None else repr(float(s.c_dep)),
                ]
            )


def approximate_capacities(s: ChargingSession) -> tuple[float, float, float]:
    """Arrival level, departure target, and floor for a session.

    Sessions that can absorb their consumption on top of a 20% arrival
    level are assumed to start there; otherwise the battery must have
    arrived with exactly the headroom for the consumed energy and leaves
    full.  Explicit values in the record override the approximation.
    """
    if 0.2 * s.c_max + s.c_cons <= s.c_max:
        c_arr = 0.2 * s.c_max
        c_dep = c_arr + s.c_cons
    else:
        c_arr = s.c_max - s.c_cons
        c_dep = s.c_max
    if s.c_arr is not None:
        c_arr = s.c_arr
    if s.c_dep is not None:
        c_dep = s.c_dep
    return c_arr, c_dep, 0.0


def assign_capacities(sessions: list[ChargingSession]) -> list[ChargingSession]:
    """Fill in c_arr/c_dep on every session, applying the approximation."""
    out = []
    for s in sessions:
        c_arr, c_dep, _ = approximate_capacities(s)
        out.append(replace(s, c_arr=c_arr, c_dep=c_dep))
    return out


def _slot_microseconds(grid: TimeGrid) -> int:
    slot_us = round(grid.delta_t * 3_600_000_000)
    if abs(grid.delta_t * 3_600_000_000 - slot_us) > 1e-3:
        raise ValueError(f"slot length {grid.delta_t} h is not a whole microsecond count")
    if grid.T * slot_us != 86_400_000_000:
        raise ValueError(f"grid T={grid.T}, delta_t={grid.delta_t} does not cover one day")
    return slot_us


def _localize(dt: datetime, tz: str) -> datetime:
    if dt.tzinfo is None:
        return dt
    return dt.astimezone(ZoneInfo(tz)).replace(tzinfo=None)


def split_multiday(
    s: ChargingSession,
    grid: TimeGrid,
    tz: str = "UTC",
) -> list[tuple[date, EvSessionParams]]:
    """Split a session into per-day records on the day's slot grid.

    Arrival slots floor and departure slots ceil, so the window covers the
    session.  Day j of m receives the arrival level of day j-1's target
    and a target proportional to the cumulative slot count, the last day
    carrying the original target exactly.
    """
    if s.c_arr is None or s.c_dep is None:
        raise ValueError(f"session {s.ev_id}: capacities not assigned before splitting")
    slot_us = _slot_microseconds(grid)
    t_in = _localize(s.plug_in, tz)
    t_out = _localize(s.plug_out, tz)

    def tod_us(dt: datetime) -> int:
        return ((dt.hour * 60 + dt.minute) * 60 + dt.second) * 1_000_000 + dt.microsecond

    spans: list[tuple[date, int, int]] = []
    day = t_in.date()
    last = t_out.date()
    while day <= last:
        start = tod_us(t_in) // slot_us if day == t_in.date() else 0
        if day == last:
            us = tod_us(t_out)
            end = -(-us // slot_us)  # ceil
        else:
            end = grid.T
        if end > start:
            spans.append((day, int(start), int(end)))
        day += timedelta(days=1)
    n_total = sum(end - start for _, start, end in spans)
    if n_total == 0:
        raise ValueError(f"session {s.ev_id}: shorter than one slot")

    p_min = -s.p_max if s.p_min is None else s.p_min
    out: list[tuple[date, EvSessionParams]] = []
    c_arr_j = s.c_arr
    cum = 0
    for j, (day, start, end) in enumerate(spans):
        cum += end - start
        c_dep_j = s.c_dep if j == len(spans) - 1 else (cum / n_total) * s.c_dep
        out.append(
            (
                day,
                EvSessionParams(
                    t_arr=start,
                    t_dep=end,
                    p_max=s.p_max,
                    p_min=p_min,
                    c_max=s.c_max,
                    c_min=0.0,
                    c_arr=c_arr_j,
                    c_dep=c_dep_j,
                ),
            )
        )
        c_arr_j = c_dep_j
    return out


@dataclass(frozen=True, eq=False)
class DailyEnvelopeSeries:
    """Aggregate envelope per calendar day, with the per-day EV records."""

    dates: list
    envelopes: dict
    per_ev: dict
    grid: TimeGrid
    fleet: FleetParams

    def __post_init__(self) -> None:
        if self.dates != sorted(self.dates):
            raise ValueError("dates must be sorted")

    def __len__(self) -> int:
        return len(self.dates)

    def stacked(self, blocks: tuple[str, ...] = ("p_max_block", "c_max_block", "c_min_block")) -> np.ndarray:
        """Concatenate the chosen envelope blocks over all days.

        Returns shape (len(self) * T, len(blocks)); the slot axis runs
        chronologically, which is the layout the forecaster consumes.
        """
        cols = []
        for d in self.dates:
            env = self.envelopes[d]
            cols.append(np.column_stack([getattr(env, name) for name in blocks]))
        if not cols:
            return np.zeros((0, len(blocks)))
        return np.concatenate(cols, axis=0)

    def export_dir(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        files = {}
        for d in self.dates:
            name = f"{d.isoformat()}.csv"
            self.envelopes[d].to_csv(root / name)
            files[d.isoformat()] = name
        manifest = {
            "format_version": MANIFEST_VERSION,
            "grid": {"T": self.grid.T, "delta_t": self.grid.delta_t},
            "fleet": {
                "alpha": self.fleet.alpha,
                "eta_in": self.fleet.eta_in,
                "eta_out": self.fleet.eta_out,
            },
            "dates": [d.isoformat() for d in self.dates],
            "files": files,
            "n_sessions": {d.isoformat(): len(self.per_ev.get(d, [])) for d in self.dates},
        }
        with open(root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load_dir(cls, path: str | Path) -> "DailyEnvelopeSeries":
        """Read a directory written by :meth:`export_dir`.

        Per-EV session records are not serialized; the loaded series
        carries empty per-day lists.
        """
        root = Path(path)
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
        if manifest.get("format_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {manifest.get('format_version')}")
        grid = TimeGrid(T=int(manifest["grid"]["T"]), delta_t=float(manifest["grid"]["delta_t"]))
        fleet = FleetParams(
            alpha=float(manifest["fleet"]["alpha"]),
            eta_in=float(manifest["fleet"]["eta_in"]),
            eta_out=float(manifest["fleet"]["eta_out"]),
        )
        dates = [date.fromisoformat(d) for d in manifest["dates"]]
        envelopes = {
            d: EnvelopeVector.from_csv(root / manifest["files"][d.isoformat()], grid, fleet)
            for d in dates
        }
        return cls(dates=dates, envelopes=envelopes, per_ev={d: [] for d in dates}, grid=grid, fleet=fleet)


def sessions_to_daily_envelopes(
    sessions: list[ChargingSession],
    fleet: FleetParams,
    grid: TimeGrid,
    tz: str = "UTC",
) -> DailyEnvelopeSeries:
    """Aggregate sessions into one envelope per day.

    Every date in the covered range appears; dates without sessions carry
    the all-zero envelope.  Multiple same-day sessions of one vehicle are
    treated as independent records.
    """
    buckets: dict[date, list[EvSessionParams]] = {}
    for s in sessions:
        for d, ev in split_multiday(s, grid, tz):
            buckets.setdefault(d, []).append(ev)
    if not buckets:
        return DailyEnvelopeSeries(dates=[], envelopes={}, per_ev={}, grid=grid, fleet=fleet)
    first, last = min(buckets), max(buckets)
    dates = []
    envelopes = {}
    per_ev = {}
    day = first
    while day <= last:
        evs = buckets.get(day, [])
        dates.append(day)
        per_ev[day] = evs
        if evs:
            envelopes[day] = aggregate([build_b_ev(ev, fleet, grid) for ev in evs])
        else:
            envelopes[day] = EnvelopeVector.zeros(grid, fleet)
        day += timedelta(days=1)
    return DailyEnvelopeSeries(dates=dates, envelopes=envelopes, per_ev=per_ev, grid=grid, fleet=fleet)


@dataclass(frozen=True)
class SyntheticFleetConfig:
    """Home-charging fleet generator settings.

    Defaults give a stationary fleet: evening arrivals, next-morning
    departures, mostly small batteries arriving nearly empty.  The weekly
    pattern and trend switches add weekend dips and slow growth for
    forecasting studies.
    """

    n_evs: int = 200
    capacity_mix: tuple = ((20.0, 0.55), (40.0, 0.25), (80.0, 0.12), (100.0, 0.08))
    port_mix: tuple = ((7.4, 0.50), (11.0, 0.35), (22.0, 0.15))
    participation: float = 0.85
    soc_arr_low_share: float = 0.95
    soc_dep_high_share: float = 0.9
    arrival_hour_mean: float = 18.0
    arrival_hour_sd: float = 1.5
    departure_hour_mean: float = 7.5
    departure_hour_sd: float = 1.0
    weekly_pattern: bool = False
    weekend_participation: float = 0.5
    weekend_arrival_hour_mean: float = 15.0
    trend_pct_per_week: float = 0.0
    explicit_soc: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_evs <= 0:
            raise ValueError("n_evs must be positive")
        for name in ("capacity_mix", "port_mix"):
            mix = getattr(self, name)
            total = sum(w for _, w in mix)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"{name} weights must sum to 1, got {total}")
        if not 0.0 <= self.participation <= 1.0:
            raise ValueError("participation must be in [0, 1]")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticFleetConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name in ("capacity_mix", "port_mix"):
            if name in raw:
                raw[name] = tuple((float(v), float(w)) for v, w in raw[name])
        return cls(**raw)


def _pick(rng: np.random.Generator, mix: tuple) -> float:
    values = [v for v, _ in mix]
    weights = [w for _, w in mix]
    return float(values[rng.choice(len(values), p=np.array(weights) / np.sum(weights))])


def generate_synthetic_fleet(
    cfg: SyntheticFleetConfig,
    days: int,
    start: date = date(2026, 1, 5),
) -> list[ChargingSession]:
    """Deterministic overnight home-charging sessions for `days` days.

    Each participating EV plugs in during the evening and leaves the next
    morning, so most sessions split across midnight.  Arrival levels
    cluster below 20% of capacity and targets near full.
    """
    rng = np.random.default_rng(cfg.seed)
    caps = np.array([_pick(rng, cfg.capacity_mix) for _ in range(cfg.n_evs)])
    ports = np.array([_pick(rng, cfg.port_mix) for _ in range(cfg.n_evs)])
    sessions: list[ChargingSession] = []
    for d in range(days):
        day = start + timedelta(days=d)
        week = d // 7
        weekend = day.weekday() >= 5
        participation = cfg.participation
        arr_mean = cfg.arrival_hour_mean
        if cfg.weekly_pattern and weekend:
            participation = cfg.weekend_participation
            arr_mean = cfg.weekend_arrival_hour_mean
        if cfg.trend_pct_per_week:
            participation = min(1.0, participation * (1.0 + cfg.trend_pct_per_week / 100.0 * week))
        for i in range(cfg.n_evs):
            if rng.random() > participation:
                continue
            arr_h = float(np.clip(rng.normal(arr_mean, cfg.arrival_hour_sd), 12.0, 23.75))
            dep_h = float(np.clip(rng.normal(cfg.departure_hour_mean, cfg.departure_hour_sd), 4.0, 11.5))
            if rng.random() < cfg.soc_arr_low_share:
                soc_arr = float(rng.uniform(0.02, 0.2))
            else:
                soc_arr = float(rng.uniform(0.2, 0.5))
            if rng.random() < cfg.soc_dep_high_share:
                soc_dep = float(rng.uniform(0.85, 1.0))
            else:
                soc_dep = float(rng.uniform(0.6, 0.85))
            soc_dep = max(soc_dep, soc_arr)
            plug_in = datetime.combine(day, datetime.min.time()) + timedelta(hours=arr_h)
            plug_out = datetime.combine(day + timedelta(days=1), datetime.min.time()) + timedelta(hours=dep_h)
            c_max = caps[i]
            c_arr = soc_arr * c_max
            c_dep = soc_dep * c_max
            sessions.append(
                ChargingSession(
                    ev_id=f"ev{i:04d}",
                    plug_in=plug_in,
                    plug_out=plug_out,
                    c_cons=c_dep - c_arr,
                    c_max=float(c_max),
                    p_max=float(ports[i]),
                    p_min=None,
                    c_arr=c_arr if cfg.explicit_soc else None,
                    c_dep=c_dep if cfg.explicit_soc else None,
                )
            )
    return sessions
