"""Day-ahead forecasting of the aggregate envelope series.

Three quarter-hourly series are forecast jointly: the fleet's available
charging power ceiling, the stored-energy headroom, and the stored-energy
requirement (p_max_agg, c_max_agg, c_min_agg).  The discharge floor is not
forecast; it is the negative of the power ceiling downstream.

Each training sample at slot t sees: the current values, 92 quarter-hourly
lags (the past 23 hours), the same slot on the past 6 days, and the same
slot in the past 5 weeks, for every variable; the feature layout is
``[3 current | 3x92 quarter-hourly | 3x6 daily | 3x5 weekly]`` with
variables ordered (p_max_agg, c_max_agg, c_min_agg) inside each block and
lags ascending.  The target is the 96 x 3 matrix of slots [t+k, t+k+95]
for a lead of k slots.

Two forecasters share this contract: a seasonal-naive baseline repeating
the value one week earlier, and a closed-form ridge regression from the
312 features to the 288 targets on standardized inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fleetflex.polytope import EnvelopeVector, FleetParams, TimeGrid
from fleetflex.sessions import DailyEnvelopeSeries

__all__ = [
    "LEADS",
    "VARIABLES",
    "N_FEATURES",
    "HORIZON",
    "SeriesTooShortError",
    "EnvelopeSeries",
    "ForecastFrame",
    "FrameSet",
    "RmseReport",
    "SeasonalNaive",
    "LinearRidge",
    "build_frames",
    "fit",
    "predict",
    "evaluate",
    "chronological_split",
    "save_model",
    "load_model",
    "envelope_from_forecast",
]

LEADS = (1, 4, 48)
VARIABLES = ("p_max_agg", "c_max_agg", "c_min_agg")
N_VARS = 3
QH_LAGS = 92  # 23 hours of quarter-hour lags
DAILY_LAGS = 6
WEEKLY_LAGS = 5
SLOTS_PER_DAY = 96
SLOTS_PER_WEEK = 7 * SLOTS_PER_DAY
HORIZON = 96
N_FEATURES = N_VARS * (1 + QH_LAGS + DAILY_LAGS + WEEKLY_LAGS)
MODEL_FORMAT_VERSION = 1


class SeriesTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnvelopeSeries:
    """Aligned quarter-hourly history of the three envelope variables.

    ``values`` has shape (S, 3) in VARIABLES order.  ``missing`` marks
    true ingestion gaps; zero-activity days are zeros, not gaps.
    """

    values: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != N_VARS:
            raise ValueError(f"values must have shape (S, {N_VARS}), got {v.shape}")
        m = np.zeros(len(v), dtype=bool) if self.missing is None else np.array(self.missing, dtype=bool)
        if m.shape != (len(v),):
            raise ValueError("missing mask must have one entry per slot")
        if not np.all(np.isfinite(v[~m])):
            raise ValueError("non-missing values must be finite")
        v.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "missing", m)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_daily(cls, daily: DailyEnvelopeSeries) -> "EnvelopeSeries":
        if daily.grid.T != SLOTS_PER_DAY:
            raise ValueError(f"forecasting expects {SLOTS_PER_DAY} slots per day, got {daily.grid.T}")
        return cls(values=daily.stacked())


@dataclass(frozen=True, eq=False)
class ForecastFrame:
    features: np.ndarray  # (N_FEATURES,)
    target: np.ndarray  # (HORIZON, N_VARS)
    seasonal: np.ndarray  # target slots one week earlier
    t: int
    k: int


@dataclass(frozen=True, eq=False)
class FrameSet:
    """Vectorized sample collection, rows in chronological order."""

    X: np.ndarray  # (n, N_FEATURES)
    Y: np.ndarray  # (n, HORIZON, N_VARS)
    seasonal: np.ndarray  # (n, HORIZON, N_VARS)
    t: np.ndarray  # (n,)
    k: int
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def row(self, i: int) -> ForecastFrame:
        return ForecastFrame(
            features=self.X[i],
            target=self.Y[i],
            seasonal=self.seasonal[i],
            t=int(self.t[i]),
            k=self.k,
        )

    def slice(self, a: int, b: int) -> "FrameSet":
        return FrameSet(X=self.X[a:b], Y=self.Y[a:b], seasonal=self.seasonal[a:b], t=self.t[a:b], k=self.k)


def build_frames(series: EnvelopeSeries, k: int) -> FrameSet:
    """All admissible samples for lead k, skipping gapped lookbacks.

    A slot t is admissible when its five-week lookback exists and the
    target window fits inside the series.  Sampling any missing slot in
    the features, the target, or the seasonal base skips the sample and
    counts it in ``n_skipped``.
    """
    if k < 1:
        raise ValueError("lead must be at least one slot")
    vals = series.values
    S = len(vals)
    first = WEEKLY_LAGS * SLOTS_PER_WEEK
    if S <= first:
        raise SeriesTooShortError(
            f"series has {S} slots; lead {k} needs at least {first + HORIZON + k}"
        )
    last = S - HORIZON - k
    ts = np.arange(first, last + 1, dtype=int)
    if ts.size == 0:
        empty = np.zeros((0, HORIZON, N_VARS))
        return FrameSet(X=np.zeros((0, N_FEATURES)), Y=empty, seasonal=empty.copy(), t=ts, k=k)

    qh = ts[:, None] - np.arange(1, QH_LAGS + 1)
    daily = ts[:, None] - SLOTS_PER_DAY * np.arange(1, DAILY_LAGS + 1)
    weekly = ts[:, None] - SLOTS_PER_WEEK * np.arange(1, WEEKLY_LAGS + 1)
    tgt = ts[:, None] + k + np.arange(HORIZON)
    seas = tgt - SLOTS_PER_WEEK
    needed = np.concatenate([ts[:, None], qh, daily, weekly, tgt, seas], axis=1)
    keep = ~series.missing[needed].any(axis=1)
    n_skipped = int(np.count_nonzero(~keep))

    def lag_block(idx: np.ndarray) -> np.ndarray:
        # variable-major: all lags of variable 0, then 1, then 2
        return vals[idx].transpose(0, 2, 1).reshape(idx.shape[0], -1)

    ts = ts[keep]
    X = np.concatenate(
        [vals[ts], lag_block(qh[keep]), lag_block(daily[keep]), lag_block(weekly[keep])], axis=1
    )
    return FrameSet(X=X, Y=vals[tgt[keep]], seasonal=vals[seas[keep]], t=ts, k=k, n_skipped=n_skipped)


def _clamp_physical(matrix: np.ndarray) -> np.ndarray:
    out = np.array(matrix, dtype=float)
    out[..., :2] = np.maximum(out[..., :2], 0.0)  # power ceiling and headroom
    return out


def _check_frame(model_k: int, frame: ForecastFrame) -> None:
    if frame.features.shape != (N_FEATURES,):
        raise ValueError(f"feature layout mismatch: expected ({N_FEATURES},), got {frame.features.shape}")
    if frame.k != model_k:
        raise ValueError(f"frame lead {frame.k} does not match model lead {model_k}")


@dataclass(frozen=True, eq=False)
class SeasonalNaive:
    """Repeat the value observed one week before each target slot."""

    k: int

    @classmethod
    def fit(cls, frames: FrameSet) -> "SeasonalNaive":
        return cls(k=frames.k)

    def predict(self, frame: ForecastFrame) -> np.ndarray:
        _check_frame(self.k, frame)
        return _clamp_physical(frame.seasonal)

    def _predict_batch(self, frames: FrameSet) -> np.ndarray:
        if frames.k != self.k:
            raise ValueError(f"frame lead {frames.k} does not match model lead {self.k}")
        return _clamp_physical(frames.seasonal)


@dataclass(frozen=True, eq=False)
class LinearRidge:
    """Closed-form multi-output ridge on standardized features."""

    k: int
    lam: float
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray  # (HORIZON * N_VARS,)
    W: np.ndarray  # (N_FEATURES, HORIZON * N_VARS)

    @classmethod
    def fit(cls, frames: FrameSet, lam: float = 1.0) -> "LinearRidge":
        if len(frames) == 0:
            raise ValueError("cannot fit on an empty frame set")
        if lam < 0:
            raise ValueError("ridge penalty must be nonnegative")
        X = frames.X
        x_mean = X.mean(axis=0)
        x_std = X.std(axis=0)
        x_std = np.where(x_std == 0.0, 1.0, x_std)
        Xs = (X - x_mean) / x_std
        if lam == 0.0 and np.linalg.matrix_rank(Xs) < X.shape[1]:
            raise ValueError("rank-deficient features need a positive ridge penalty")
        Yf = frames.Y.reshape(len(frames), -1)
        y_mean = Yf.mean(axis=0)
        gram = Xs.T @ Xs + lam * np.eye(X.shape[1])
        W = np.linalg.solve(gram, Xs.T @ (Yf - y_mean))
        return cls(k=frames.k, lam=lam, x_mean=x_mean, x_std=x_std, y_mean=y_mean, W=W)

    def predict(self, frame: ForecastFrame) -> np.ndarray:
        _check_frame(self.k, frame)
        xs = (frame.features - self.x_mean) / self.x_std
        flat = xs @ self.W + self.y_mean
        return _clamp_physical(flat.reshape(HORIZON, N_VARS))

    def _predict_batch(self, frames: FrameSet) -> np.ndarray:
        if frames.k != self.k:
            raise ValueError(f"frame lead {frames.k} does not match model lead {self.k}")
        Xs = (frames.X - self.x_mean) / self.x_std
        flat = Xs @ self.W + self.y_mean
        return _clamp_physical(flat.reshape(len(frames), HORIZON, N_VARS))


MODEL_KINDS = {"SeasonalNaive": SeasonalNaive, "LinearRidge": LinearRidge}


def fit(kind: str, frames: FrameSet, lam: float = 1.0):
    if kind == "SeasonalNaive":
        return SeasonalNaive.fit(frames)
    if kind == "LinearRidge":
        return LinearRidge.fit(frames, lam=lam)
    raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")


def predict(model, frame: ForecastFrame) -> np.ndarray:
    return model.predict(frame)


@dataclass(frozen=True)
class RmseReport:
    """Per-variable RMSE pooled over all test samples and horizon steps."""

    per_variable: dict
    average: float
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "per_variable": dict(self.per_variable),
            "average": self.average,
            "n_samples": self.n_samples,
        }


def evaluate(model, frames: FrameSet) -> RmseReport:
    if len(frames) == 0:
        raise ValueError("cannot evaluate on an empty frame set")
    preds = model._predict_batch(frames)
    err = preds - frames.Y
    per_var = {
        name: float(np.sqrt(np.mean(err[:, :, j] ** 2))) for j, name in enumerate(VARIABLES)
    }
    avg = float(np.mean([per_var[name] for name in VARIABLES]))
    return RmseReport(per_variable=per_var, average=avg, n_samples=len(frames))


def chronological_split(frames: FrameSet, train_fraction: float = 0.9) -> tuple[FrameSet, FrameSet]:
    """Time-ordered split; the test block strictly follows the train block."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    n = len(frames)
    n_train = int(n * train_fraction)
    if n_train < 1 or n - n_train < 1:
        raise ValueError(f"{n} samples cannot support a {train_fraction:.0%} split")
    return frames.slice(0, n_train), frames.slice(n_train, n)


def save_model(model, path: str | Path) -> None:
    if isinstance(model, SeasonalNaive):
        doc = {"format_version": MODEL_FORMAT_VERSION, "kind": "SeasonalNaive", "k": model.k}
    elif isinstance(model, LinearRidge):
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "LinearRidge",
            "k": model.k,
            "lam": model.lam,
            "x_mean": model.x_mean.tolist(),
            "x_std": model.x_std.tolist(),
            "y_mean": model.y_mean.tolist(),
            "W": model.W.tolist(),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path):
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    kind = doc.get("kind")
    if kind == "SeasonalNaive":
        return SeasonalNaive(k=int(doc["k"]))
    if kind == "LinearRidge":
        return LinearRidge(
            k=int(doc["k"]),
            lam=float(doc["lam"]),
            x_mean=np.array(doc["x_mean"], dtype=float),
            x_std=np.array(doc["x_std"], dtype=float),
            y_mean=np.array(doc["y_mean"], dtype=float),
            W=np.array(doc["W"], dtype=float),
        )
    raise ValueError(f"unknown model kind {kind!r}")


def envelope_from_forecast(matrix: np.ndarray, grid: TimeGrid, fleet: FleetParams) -> EnvelopeVector:
    """Materialize a forecast matrix as an envelope for scheduling.

    The discharge floor mirrors the forecast power ceiling (symmetric
    ports); power and headroom are clamped to physical range.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (grid.T, N_VARS):
        raise ValueError(f"forecast matrix must have shape ({grid.T}, {N_VARS}), got {m.shape}")
    m = _clamp_physical(m)
    return EnvelopeVector(
        p_max_block=m[:, 0],
        neg_p_min_block=m[:, 0],
        c_max_block=m[:, 1],
        c_min_block=m[:, 2],
        grid=grid,
        fleet=fleet,
    )
