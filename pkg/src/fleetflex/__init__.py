"""EV fleet flexibility toolkit.

Builds per-EV and aggregate operational envelopes from charging-session
data, schedules the fleet against day-ahead prices and operating limits,
forecasts day-ahead envelope vectors, and scores flexibility-bid delivery.
"""

from fleetflex.forecast import (
    EnvelopeSeries,
    FrameSet,
    LinearRidge,
    SeasonalNaive,
    build_frames,
    chronological_split,
    envelope_from_forecast,
    evaluate,
)
from fleetflex.market import (
    DeliveryReport,
    FlexStudyResult,
    classify_delivery,
    evaluate_delivery,
    flexibility_study,
    select_bid,
)
from fleetflex.polytope import (
    EnvelopeVector,
    EvSessionParams,
    FleetParams,
    TimeGrid,
    aggregate,
    build_A,
    build_b_battery,
    build_b_ev,
    build_gamma,
    check_feasible,
    simulate_soc,
)
from fleetflex.scheduling import (
    DoeSignal,
    FlexResult,
    PriceSignal,
    Schedule,
    SchedulingError,
    baseline_schedule,
    default_tariff,
    disaggregate,
    doe_schedule,
    max_upward_flex,
)
from fleetflex.sessions import (
    ChargingSession,
    DailyEnvelopeSeries,
    SyntheticFleetConfig,
    generate_synthetic_fleet,
    parse_sessions,
    sessions_to_daily_envelopes,
    split_multiday,
)

__version__ = "0.1.0"

__all__ = [
    "ChargingSession",
    "DailyEnvelopeSeries",
    "DeliveryReport",
    "DoeSignal",
    "EnvelopeSeries",
    "EnvelopeVector",
    "EvSessionParams",
    "FleetParams",
    "FlexResult",
    "FlexStudyResult",
    "FrameSet",
    "LinearRidge",
    "PriceSignal",
    "Schedule",
    "SchedulingError",
    "SeasonalNaive",
    "SyntheticFleetConfig",
    "TimeGrid",
    "aggregate",
    "baseline_schedule",
    "build_A",
    "build_b_battery",
    "build_b_ev",
    "build_frames",
    "build_gamma",
    "check_feasible",
    "chronological_split",
    "classify_delivery",
    "default_tariff",
    "disaggregate",
    "doe_schedule",
    "envelope_from_forecast",
    "evaluate",
    "evaluate_delivery",
    "flexibility_study",
    "generate_synthetic_fleet",
    "max_upward_flex",
    "parse_sessions",
    "select_bid",
    "sessions_to_daily_envelopes",
    "simulate_soc",
    "split_multiday",
    "__version__",
]
