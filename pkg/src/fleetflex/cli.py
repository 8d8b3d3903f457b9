"""Command-line pipeline: sessions to envelopes, forecasts, schedules, bids.

Every run is driven by one JSON config plus a few flag overrides, so a
result can be reproduced from the config and seed alone.  Exit codes:
0 on success, 1 when a computation is infeasible (empty polytope,
insufficient history, no solvable study dates), 2 on input or format
errors (bad config keys, malformed CSV, missing files).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from fleetflex.forecast import (
    VARIABLES,
    EnvelopeSeries,
    LinearRidge,
    RmseReport,
    SeasonalNaive,
    SeriesTooShortError,
    build_frames,
    chronological_split,
    envelope_from_forecast,
    evaluate,
    save_model,
)
from fleetflex.market import evaluate_delivery, flexibility_study, select_bid
from fleetflex.polytope import EnvelopeVector, FleetParams, TimeGrid, build_A
from fleetflex.scheduling import (
    DoeSignal,
    PriceSignal,
    SchedulingError,
    baseline_schedule,
    default_tariff,
    doe_schedule,
)
from fleetflex.sessions import (
    DailyEnvelopeSeries,
    SessionFormatError,
    SyntheticFleetConfig,
    generate_synthetic_fleet,
    parse_sessions,
    sessions_to_daily_envelopes,
    write_sessions_csv,
)

__all__ = ["RunConfig", "ConfigError", "ComputeError", "main"]

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_INPUT = 2

_QUANTILE_CHOICES = ("q1", "median", "q3")


class ConfigError(ValueError):
    """Invalid configuration or input file; maps to exit code 2."""


class ComputeError(RuntimeError):
    """Well-formed inputs with no feasible answer; maps to exit code 1."""


def _grid_from(doc) -> TimeGrid:
    if not isinstance(doc, dict) or set(doc) - {"T", "delta_t"}:
        raise ConfigError("grid must be an object with keys T and delta_t")
    return TimeGrid(**doc)


def _fleet_from(doc) -> FleetParams:
    allowed = {"alpha", "eta_in", "eta_out"}
    if not isinstance(doc, dict) or set(doc) - allowed:
        raise ConfigError(f"fleet accepts keys {sorted(allowed)}")
    return FleetParams(**doc)


def _date_pair(doc) -> tuple[datetime.date, datetime.date]:
    if not isinstance(doc, (list, tuple)) or len(doc) != 2:
        raise ConfigError("date range must be a [start, end] pair of ISO dates")
    a, b = (datetime.date.fromisoformat(str(v)) for v in doc)
    if a > b:
        raise ConfigError(f"date range start {a} is after end {b}")
    return (a, b)


def _windows_from(doc) -> tuple[tuple[int, int], ...]:
    try:
        wins = tuple((int(a), int(b)) for a, b in doc)
    except (TypeError, ValueError):
        raise ConfigError("windows must be a list of [start_slot, end_slot] pairs") from None
    if not wins:
        raise ConfigError("windows must not be empty")
    return wins


@dataclass(frozen=True)
class RunConfig:
    """One JSON document describing a full pipeline run."""

    sessions_csv: str | None = None
    prices_csv: str | None = None
    doe_csv: str | None = None
    envelope_dir: str | None = None
    envelope_csv: str | None = None
    out_dir: str = "out"
    grid: TimeGrid = TimeGrid()
    fleet: FleetParams = FleetParams()
    tz: str = "UTC"
    lead_k: int = 1
    lam_ridge: float = 1.0
    train_fraction: float = 0.9
    windows: tuple = ((70, 79), (60, 67))
    study_dates: tuple | None = None
    eval_dates: tuple | None = None
    quantile: str = "median"
    seed: int = 0
    synth: dict = field(default_factory=dict)
    synth_days: int = 84
    synth_start: datetime.date = datetime.date(2026, 1, 5)

    def __post_init__(self) -> None:
        if self.quantile not in _QUANTILE_CHOICES:
            raise ConfigError(f"quantile must be one of {list(_QUANTILE_CHOICES)}, got {self.quantile!r}")
        if int(self.lead_k) != self.lead_k or self.lead_k < 1:
            raise ConfigError(f"lead_k must be a positive integer, got {self.lead_k}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be strictly between 0 and 1")
        if self.synth_days < 1:
            raise ConfigError("synth_days must be positive")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(doc)
        try:
            if "grid" in kw:
                kw["grid"] = _grid_from(kw["grid"])
            if "fleet" in kw:
                kw["fleet"] = _fleet_from(kw["fleet"])
            if "windows" in kw:
                kw["windows"] = _windows_from(kw["windows"])
            for key in ("study_dates", "eval_dates"):
                if kw.get(key) is not None:
                    kw[key] = _date_pair(kw[key])
            if "synth_start" in kw:
                kw["synth_start"] = datetime.date.fromisoformat(str(kw["synth_start"]))
            if "synth" in kw:
                synth = kw["synth"]
                if not isinstance(synth, dict):
                    raise ConfigError("synth must be an object")
                if "seed" in synth:
                    raise ConfigError("set the top-level seed, not synth.seed")
                bad = set(synth) - (set(SyntheticFleetConfig.__dataclass_fields__) - {"seed"})
                if bad:
                    raise ConfigError(f"unknown synth keys: {sorted(bad)}")
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_json_dict(doc)


# -- shared loading helpers ---------------------------------------------------


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    return dataclasses.replace(cfg, **over) if over else cfg


def _synth_config(cfg: RunConfig, n_evs: int | None) -> SyntheticFleetConfig:
    kw = dict(cfg.synth)
    kw["seed"] = cfg.seed
    if n_evs is not None:
        kw["n_evs"] = n_evs
    try:
        return SyntheticFleetConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_daily(cfg: RunConfig, args) -> DailyEnvelopeSeries:
    env_dir = getattr(args, "envelopes", None) or cfg.envelope_dir
    if env_dir is None:
        raise ConfigError("an envelope directory is required (--envelopes or envelope_dir)")
    try:
        return DailyEnvelopeSeries.load_dir(env_dir)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load envelope directory {env_dir}: {exc}") from exc


def _load_prices(cfg: RunConfig, grid: TimeGrid, path: str | None = None) -> PriceSignal:
    chosen = path or cfg.prices_csv
    if chosen is None:
        return default_tariff(grid)
    try:
        return PriceSignal.from_csv(chosen, grid)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load prices {chosen}: {exc}") from exc


def _filter_dates(daily: DailyEnvelopeSeries, date_pair) -> list | None:
    if date_pair is None:
        return None
    a, b = date_pair
    chosen = [d for d in daily.dates if a <= d <= b]
    if not chosen:
        raise ConfigError(f"no envelope dates inside [{a}, {b}]")
    return chosen


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# -- subcommands ---------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args, out: Path) -> int:
    days = args.days if args.days is not None else cfg.synth_days
    if days < 1:
        raise ConfigError("--days must be positive")
    scfg = _synth_config(cfg, args.evs)
    sessions = generate_synthetic_fleet(scfg, days=days, start=cfg.synth_start)
    path = out / "sessions.csv"
    write_sessions_csv(sessions, path)
    print(f"wrote {len(sessions)} sessions for {scfg.n_evs} EVs over {days} days to {path}")
    return EXIT_OK


def cmd_ingest(cfg: RunConfig, args, out: Path) -> int:
    if args.synthetic:
        scfg = _synth_config(cfg, None)
        sessions = generate_synthetic_fleet(scfg, days=cfg.synth_days, start=cfg.synth_start)
        print(f"generated {len(sessions)} synthetic sessions (seed {cfg.seed})")
    else:
        path = args.sessions or cfg.sessions_csv
        if path is None:
            raise ConfigError("ingest needs --sessions, sessions_csv in the config, or --synthetic")
        sessions, report = parse_sessions(path)
        _write_json(out / "cleaning_report.json", {
            "n_rows": report.n_rows,
            "n_kept": report.n_kept,
            "dropped_consumption": report.dropped_consumption,
            "dropped_duration": report.dropped_duration,
            "row_errors": [[line, msg] for line, msg in report.row_errors],
        })
        print(
            f"parsed {report.n_rows} rows: kept {report.n_kept}, "
            f"dropped {report.n_dropped}, errored {len(report.row_errors)}"
        )
    daily = sessions_to_daily_envelopes(sessions, cfg.fleet, cfg.grid, tz=cfg.tz)
    env_dir = out / "envelopes"
    daily.export_dir(env_dir)
    print(f"wrote {len(daily.dates)} daily envelopes to {env_dir}")
    return EXIT_OK


def _print_rmse_table(reports: dict[str, RmseReport]) -> None:
    cols = list(VARIABLES) + ["average"]
    print(f"{'model':<16}" + "".join(f"{c:>12}" for c in cols))
    for name, rep in reports.items():
        vals = [rep.per_variable[v] for v in VARIABLES] + [rep.average]
        print(f"{name:<16}" + "".join(f"{v:>12.4f}" for v in vals))


def cmd_forecast(cfg: RunConfig, args, out: Path) -> int:
    daily = _load_daily(cfg, args)
    try:
        series = EnvelopeSeries.from_daily(daily)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    k = args.lead if args.lead is not None else cfg.lead_k
    if k < 1:
        raise ConfigError("--lead must be a positive integer")

    frames = build_frames(series, k)
    if len(frames) == 0:
        raise ComputeError(f"history admits no samples at lead {k}; extend the envelope series")
    try:
        train, test = chronological_split(frames, cfg.train_fraction)
    except ValueError as exc:
        raise ComputeError(str(exc)) from exc
    naive = SeasonalNaive.fit(train)
    try:
        ridge = LinearRidge.fit(train, lam=cfg.lam_ridge)
    except ValueError as exc:
        raise ComputeError(str(exc)) from exc
    reports = {"SeasonalNaive": evaluate(naive, test), "LinearRidge": evaluate(ridge, test)}
    _print_rmse_table(reports)

    _write_json(out / f"rmse_k{k}.json", {
        "k": k,
        "n_train": len(train),
        "n_test": len(test),
        "seasonal_naive": reports["SeasonalNaive"].to_json_dict(),
        "linear_ridge": reports["LinearRidge"].to_json_dict(),
    })
    save_model(ridge, out / f"model_k{k}.json")

    # day-ahead envelope files for test samples whose target starts at midnight
    T = daily.grid.T
    preds = ridge._predict_batch(test)
    n_written = 0
    for i in range(len(test)):
        start = int(test.t[i]) + k
        if start % T:
            continue
        day = daily.dates[start // T]
        env = envelope_from_forecast(preds[i], daily.grid, daily.fleet)
        env.to_csv(out / f"forecast_{day.isoformat()}.csv")
        n_written += 1
    print(f"wrote {n_written} day-ahead envelope forecasts, model and RMSE JSON to {out}")
    return EXIT_OK


def cmd_schedule(cfg: RunConfig, args, out: Path) -> int:
    env_path = args.envelope or cfg.envelope_csv
    if env_path is not None:
        try:
            env = EnvelopeVector.from_csv(env_path, cfg.grid, cfg.fleet)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load envelope {env_path}: {exc}") from exc
    else:
        daily = _load_daily(cfg, args)
        if args.date is None:
            raise ConfigError("pick a day with --date when scheduling from an envelope directory")
        day = datetime.date.fromisoformat(args.date)
        if day not in daily.envelopes:
            raise ConfigError(f"no envelope for {day.isoformat()}")
        env = daily.envelopes[day]

    prices = _load_prices(cfg, env.grid, args.prices)
    A = build_A(env.fleet, env.grid)
    if args.mode == "doe":
        doe_path = args.doe or cfg.doe_csv
        if doe_path is None:
            raise ConfigError("doe mode needs --doe or doe_csv in the config")
        try:
            doe = DoeSignal.from_csv(doe_path, env.grid)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load DOE {doe_path}: {exc}") from exc
        schedule = doe_schedule(env, A, prices, doe)
    else:
        schedule = baseline_schedule(env, A, prices)

    csv_path = out / f"schedule_{args.mode}.csv"
    schedule.to_csv(csv_path)
    cost = schedule.cost(prices)
    _write_json(out / f"schedule_{args.mode}_summary.json", {
        "mode": args.mode,
        "cost": cost,
        "energy_added_kwh": float(schedule.energy_added()[-1]),
    })
    print(f"{args.mode} schedule written to {csv_path}; cost {cost:.4f}")
    return EXIT_OK


def cmd_flex(cfg: RunConfig, args, out: Path) -> int:
    daily = _load_daily(cfg, args)
    prices = _load_prices(cfg, daily.grid)
    quantile = args.quantile or cfg.quantile
    study_dates = _filter_dates(daily, cfg.study_dates)

    study = flexibility_study(daily, prices, cfg.windows, dates=study_dates)
    study.to_csv(out / "study.csv")
    study.write_json(out / "study.json")
    if study.failures:
        print(f"{len(study.failures)} study dates failed to solve")

    bids = {}
    for w in study.windows:
        try:
            bids[w] = select_bid(study, w, quantile)
        except ValueError as exc:
            raise ComputeError(str(exc)) from exc
        print(f"window {w[0]}-{w[1]}: {quantile} bid {bids[w]:.4f} kW")

    if cfg.eval_dates is not None:
        eval_dates = _filter_dates(daily, cfg.eval_dates)
        for w in study.windows:
            report = evaluate_delivery(bids[w], daily, prices, w, dates=eval_dates)
            stem = f"delivery_{w[0]}_{w[1]}"
            report.to_csv(out / f"{stem}.csv")
            report.write_json(out / f"{stem}.json")
            rates = report.rates
            print(
                f"window {w[0]}-{w[1]}: success {rates['Success']:.1%}, "
                f"partial {rates['Partial']:.1%}, failure {rates['Failure']:.1%}"
            )
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> int:
    if args.bid < 0:
        raise ConfigError("--bid must be nonnegative")
    if args.window is not None:
        try:
            t_s, t_e = (int(v) for v in args.window.split(":"))
        except ValueError:
            raise ConfigError("--window must look like START:END in slot indices") from None
        window = (t_s, t_e)
    else:
        window = cfg.windows[0]

    daily = _load_daily(cfg, args)
    prices = _load_prices(cfg, daily.grid)
    eval_dates = _filter_dates(daily, cfg.eval_dates)
    report = evaluate_delivery(args.bid, daily, prices, window, dates=eval_dates)
    report.to_csv(out / "delivery.csv")
    report.write_json(out / "delivery.json")
    rates = report.rates
    print(
        f"bid {args.bid:.4f} kW over {len(report.label)} dates: "
        f"success {rates['Success']:.1%}, partial {rates['Partial']:.1%}, "
        f"failure {rates['Failure']:.1%}"
    )
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--out", metavar="DIR", help="override the output directory")

    parser = argparse.ArgumentParser(
        prog="fleetflex",
        description="EV-fleet flexibility pipeline: envelopes, forecasts, schedules, bids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic sessions CSV")
    p.add_argument("--days", type=int, help="number of days to generate")
    p.add_argument("--evs", type=int, help="fleet size override")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="sessions CSV to daily envelope files")
    p.add_argument("--sessions", metavar="CSV", help="sessions file (overrides config)")
    p.add_argument("--synthetic", action="store_true", help="generate the fleet instead of reading a CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("forecast", parents=[common], help="train and score envelope forecasters")
    p.add_argument("--envelopes", metavar="DIR", help="envelope directory (overrides config)")
    p.add_argument("--lead", type=int, help="lead time in slots (overrides config)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("schedule", parents=[common], help="least-cost or DOE-capped day schedule")
    p.add_argument("--mode", choices=("baseline", "doe"), default="baseline")
    p.add_argument("--envelope", metavar="CSV", help="single-day envelope file")
    p.add_argument("--envelopes", metavar="DIR", help="envelope directory (with --date)")
    p.add_argument("--date", metavar="ISO", help="day to schedule from an envelope directory")
    p.add_argument("--prices", metavar="CSV", help="price signal (overrides config)")
    p.add_argument("--doe", metavar="CSV", help="dynamic operating envelope (doe mode)")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("flex", parents=[common], help="availability study, bid selection, delivery check")
    p.add_argument("--envelopes", metavar="DIR", help="envelope directory (overrides config)")
    p.add_argument("--quantile", choices=_QUANTILE_CHOICES, help="bid quantile (overrides config)")
    p.set_defaults(func=cmd_flex)

    p = sub.add_parser("evaluate", parents=[common], help="score one bid against an evaluation period")
    p.add_argument("--envelopes", metavar="DIR", help="envelope directory (overrides config)")
    p.add_argument("--bid", type=float, required=True, help="bid size in kW")
    p.add_argument("--window", metavar="START:END", help="inclusive slot window")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = RunConfig() if args.config is None else RunConfig.from_file(args.config)
        cfg = _apply_overrides(cfg, args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return args.func(cfg, args, out)
    except (SchedulingError, SeriesTooShortError, ComputeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (ConfigError, SessionFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
