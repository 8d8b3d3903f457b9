"""Flexibility-bid studies and delivery-reliability scoring.

A study runs the two-stage procedure (least-cost baseline, then maximum
sustained upward flexibility) over a range of historical days and
summarizes the per-window availability with quantiles.  A bid chosen
from those quantiles is then scored against a later evaluation period:
each day's delivered fraction is ``min(available, bid) / bid`` capped at
one, classified Success at or above 0.9, Partial in [0.5, 0.9), and
Failure below 0.5.  A zero bid is vacuously a Success.

Availability here is the re-solved per-day optimum, not a simulated
dispatch.  Interval boundaries are closed on the left, and quantiles
interpolate linearly between order statistics.
"""

from __future__ import annotations

import csv
import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from fleetflex.polytope import ConstraintMatrix, build_A
from fleetflex.scheduling import PriceSignal, SchedulingError, baseline_schedule, max_upward_flex
from fleetflex.sessions import DailyEnvelopeSeries

__all__ = [
    "CLASSES",
    "EVENING_WINDOW",
    "AFTERNOON_WINDOW",
    "FlexStudyResult",
    "DeliveryReport",
    "flexibility_study",
    "select_bid",
    "classify_delivery",
    "evaluate_delivery",
]

CLASSES = ("Success", "Partial", "Failure")
SUCCESS_FLOOR = 0.9
PARTIAL_FLOOR = 0.5

# quarter-hour slot windows (inclusive) for the two standard bid products
EVENING_WINDOW = (70, 79)  # 17:30 to 20:00
AFTERNOON_WINDOW = (60, 67)  # 15:00 to 17:00

_QUANTILES = {"q1": 0.25, "median": 0.5, "q3": 0.75}

STUDY_CSV_DATE_COLUMN = "date"
DELIVERY_CSV_HEADER = ["date", "available_kw", "fraction", "class"]


def _window_label(window: tuple[int, int]) -> str:
    return f"flex_{window[0]}_{window[1]}_kw"


def _normalize_windows(windows, T: int) -> tuple[tuple[int, int], ...]:
    out = []
    for w in windows:
        t_s, t_e = int(w[0]), int(w[1])
        if not (0 <= t_s <= t_e < T):
            raise ValueError(f"window {w} outside [0, {T})")
        out.append((t_s, t_e))
    if not out:
        raise ValueError("at least one window is required")
    if len(set(out)) != len(out):
        raise ValueError("windows must be distinct")
    return tuple(out)


def _prices_for(prices, day: datetime.date) -> PriceSignal:
    if isinstance(prices, PriceSignal):
        return prices
    try:
        return prices[day]
    except KeyError:
        raise ValueError(f"no price signal for {day.isoformat()}") from None


def _select_dates(series: DailyEnvelopeSeries, dates) -> list[datetime.date]:
    chosen = sorted(series.dates) if dates is None else sorted(dates)
    if not chosen:
        raise ValueError("date range is empty")
    missing = [d for d in chosen if d not in series.envelopes]
    if missing:
        raise ValueError(f"no envelope for {missing[0].isoformat()}")
    return chosen


def _availability(
    series: DailyEnvelopeSeries,
    prices,
    windows: tuple[tuple[int, int], ...],
    dates,
) -> tuple[dict, dict]:
    """Per-date max upward flex for each window; failures kept aside."""
    A: ConstraintMatrix = build_A(series.fleet, series.grid)
    flex = {w: {} for w in windows}
    failures: dict[datetime.date, str] = {}
    for day in _select_dates(series, dates):
        env = series.envelopes[day]
        try:
            base = baseline_schedule(env, A, _prices_for(prices, day))
            per_window = {w: max_upward_flex(env, A, base, w).flex for w in windows}
        except SchedulingError as exc:
            failures[day] = str(exc)
            continue
        for w, value in per_window.items():
            flex[w][day] = value
    return flex, failures


@dataclass(frozen=True)
class FlexStudyResult:
    """Per-date availability per window, quantile summaries on top.

    Quantiles cover successful-solve dates only; dates where any stage
    failed are recorded in ``failures`` and excluded everywhere else.
    """

    windows: tuple[tuple[int, int], ...]
    flex_kw: dict  # window -> {date: kW}
    failures: dict = field(default_factory=dict)  # date -> message

    def dates(self) -> list[datetime.date]:
        return sorted(self.flex_kw[self.windows[0]])

    def values(self, window: tuple[int, int]) -> np.ndarray:
        window = (int(window[0]), int(window[1]))
        if window not in self.flex_kw:
            raise ValueError(f"window {window} not part of this study")
        per_date = self.flex_kw[window]
        return np.array([per_date[d] for d in sorted(per_date)])

    def quantiles(self, window: tuple[int, int]) -> dict:
        vals = self.values(window)
        if len(vals) == 0:
            raise ValueError("no successful dates to summarize")
        return {name: float(np.quantile(vals, q)) for name, q in _QUANTILES.items()}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([STUDY_CSV_DATE_COLUMN] + [_window_label(win) for win in self.windows])
            for day in self.dates():
                row = [day.isoformat()]
                row += [repr(float(self.flex_kw[win][day])) for win in self.windows]
                w.writerow(row)

    def to_json_dict(self) -> dict:
        summary = {}
        for win in self.windows:
            entry = {"n_dates": int(len(self.flex_kw[win]))}
            if self.flex_kw[win]:
                entry.update(self.quantiles(win))
            summary[_window_label(win)] = entry
        return {
            "windows": [list(win) for win in self.windows],
            "summary": summary,
            "n_failures": len(self.failures),
            "failures": {d.isoformat(): msg for d, msg in sorted(self.failures.items())},
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def flexibility_study(
    series: DailyEnvelopeSeries,
    prices,
    windows,
    dates=None,
) -> FlexStudyResult:
    """Two-stage availability study over a date range.

    ``prices`` is a single signal applied to every day or a mapping from
    date to signal.  Solver failures are collected per date, never fatal.
    """
    windows = _normalize_windows(windows, series.grid.T)
    flex, failures = _availability(series, prices, windows, dates)
    return FlexStudyResult(windows=windows, flex_kw=flex, failures=failures)


def select_bid(result: FlexStudyResult, window: tuple[int, int], quantile: str = "median") -> float:
    if quantile not in _QUANTILES:
        raise ValueError(f"quantile must be one of {sorted(_QUANTILES)}, got {quantile!r}")
    return result.quantiles(window)[quantile]


def _classify(fraction: float) -> str:
    if fraction >= SUCCESS_FLOOR:
        return "Success"
    if fraction >= PARTIAL_FLOOR:
        return "Partial"
    return "Failure"


@dataclass(frozen=True)
class DeliveryReport:
    """Per-date delivered fractions for one bid, with class tallies."""

    bid_kw: float
    window: tuple[int, int] | None
    available_kw: dict  # date -> kW
    fraction: dict  # date -> delivered fraction in [0, 1]
    label: dict  # date -> class name
    failures: dict = field(default_factory=dict)

    def dates(self) -> list[datetime.date]:
        return sorted(self.available_kw)

    @property
    def counts(self) -> dict:
        out = {name: 0 for name in CLASSES}
        for cls in self.label.values():
            out[cls] += 1
        return out

    @property
    def rates(self) -> dict:
        n = len(self.label)
        if n == 0:
            return {name: 0.0 for name in CLASSES}
        return {name: count / n for name, count in self.counts.items()}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DELIVERY_CSV_HEADER)
            for day in self.dates():
                w.writerow([
                    day.isoformat(),
                    repr(float(self.available_kw[day])),
                    repr(float(self.fraction[day])),
                    self.label[day],
                ])

    def to_json_dict(self) -> dict:
        return {
            "bid_kw": self.bid_kw,
            "window": list(self.window) if self.window is not None else None,
            "n_dates": len(self.label),
            "counts": self.counts,
            "rates": self.rates,
            "n_failures": len(self.failures),
            "failures": {d.isoformat(): msg for d, msg in sorted(self.failures.items())},
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def classify_delivery(
    bid_kw: float,
    available_kw: Mapping[datetime.date, float],
    window: tuple[int, int] | None = None,
    failures: dict | None = None,
) -> DeliveryReport:
    """Score an availability table against a bid (no solving involved)."""
    bid = float(bid_kw)
    if bid < 0:
        raise ValueError("bid must be nonnegative")
    fraction = {}
    label = {}
    for day, avail in available_kw.items():
        f = 1.0 if bid == 0.0 else min(float(avail), bid) / bid
        f = min(max(f, 0.0), 1.0)
        fraction[day] = f
        label[day] = _classify(f)
    return DeliveryReport(
        bid_kw=bid,
        window=window,
        available_kw=dict(available_kw),
        fraction=fraction,
        label=label,
        failures=dict(failures or {}),
    )


def evaluate_delivery(
    bid_kw: float,
    series: DailyEnvelopeSeries,
    prices,
    window: tuple[int, int],
    dates=None,
) -> DeliveryReport:
    """Re-solve availability per date and classify delivery of a bid."""
    windows = _normalize_windows([window], series.grid.T)
    flex, failures = _availability(series, prices, windows, dates)
    return classify_delivery(bid_kw, flex[windows[0]], window=windows[0], failures=failures)
