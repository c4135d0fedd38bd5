"""Signal conditioning: 1000 Hz -> 1 Hz, moving average, one-minute cut, MinMax.

Trips carry five IMU channels in a fixed order (:data:`CHANNELS`). A trip's
``label`` is ``"normal"``, ``"aggressive"`` or ``None`` (unlabeled); unlabeled
trips may still carry a hidden ground-truth class in ``truth`` which is only
ever used for test-time scoring.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from .numerics import ContractError

CHANNELS = ("long_acc", "lat_acc", "pitch", "yaw", "roll")
CLASSES = ("normal", "aggressive")
UNLABELED = "unlabeled"
RAW_RATE = 1000
TRIP_SECONDS = 60
MA_WINDOW = 10


class PreprocessError(ContractError):
    """A pipeline stage rejected a trip; the message names the trip."""


@dataclass
class RawTrip:
    samples: np.ndarray          # (T, 5) at 1000 Hz
    label: str | None = None
    trip_id: str = ""
    truth: str | None = None

    @property
    def true_class(self) -> str | None:
        return self.label if self.label is not None else self.truth


@dataclass
class Trip:
    values: np.ndarray           # (60, 5) at 1 Hz
    label: str | None = None
    trip_id: str = ""
    truth: str | None = None

    @property
    def true_class(self) -> str | None:
        return self.label if self.label is not None else self.truth


def check_label(label: str | None) -> str | None:
    if label is None or label == UNLABELED:
        return None
    if label not in CLASSES:
        raise ContractError(f"unknown label {label!r}; expected one of {CLASSES} or {UNLABELED!r}")
    return label


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def downsample(raw: RawTrip, factor: int = RAW_RATE, min_rows: int = TRIP_SECONDS) -> np.ndarray:
    """Keep every ``factor``-th sample starting at index 0."""
    samples = np.asarray(raw.samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < factor * min_rows:
        raise PreprocessError(
            f"trip {raw.trip_id!r}: need at least {factor * min_rows} raw samples, "
            f"got {samples.shape[0] if samples.ndim else 0}"
        )
    return samples[::factor].copy()


def moving_average(series: np.ndarray, w: int = MA_WINDOW) -> np.ndarray:
    """Causal trailing mean; the first w-1 outputs average the samples seen so far.

    Works along axis 0, so a (L, C) array is filtered channel by channel.
    """
    if w < 1:
        raise ContractError("moving-average window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    L = x.shape[0]
    head = min(w - 1, L)
    for t in range(head):
        out[t] = x[: t + 1].mean(axis=0)
    if L >= w:
        windows = np.lib.stride_tricks.sliding_window_view(x, w, axis=0)
        out[w - 1:] = windows.mean(axis=-1)
    return out


def truncate(values: np.ndarray, n: int = TRIP_SECONDS) -> np.ndarray:
    values = np.asarray(values)
    if values.shape[0] < n:
        raise PreprocessError(f"need at least {n} rows to truncate, got {values.shape[0]}")
    return values[:n].copy()


@dataclass(frozen=True)
class ScalerParams:
    min: np.ndarray
    max: np.ndarray
    degenerate: np.ndarray

    def __eq__(self, other) -> bool:
        return (isinstance(other, ScalerParams)
                and np.array_equal(self.min, other.min)
                and np.array_equal(self.max, other.max)
                and np.array_equal(self.degenerate, other.degenerate))

    def to_json(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(),
                "degenerate": self.degenerate.astype(bool).tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ScalerParams":
        lo = np.asarray(obj["min"], dtype=np.float64)
        hi = np.asarray(obj["max"], dtype=np.float64)
        deg = np.asarray(obj.get("degenerate", lo == hi), dtype=bool)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ContractError("scaler min/max malformed")
        return cls(lo, hi, deg)


def _stack_rows(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        arr = data
    else:
        items = [t.values if isinstance(t, Trip) else np.asarray(t) for t in data]
        if not items:
            raise ContractError("cannot fit a scaler on an empty set")
        arr = np.stack(items)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("cannot fit a scaler on an empty set")
    return arr.reshape(-1, arr.shape[-1])


def fit_minmax(data) -> ScalerParams:
    """Per-column extrema over every row of every item.

    ``data`` is a sequence of :class:`Trip` / arrays, or one array whose last
    axis indexes channels.
    """
    rows = _stack_rows(data)
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    return ScalerParams(lo, hi, lo == hi)


def apply_minmax(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    """(x - min) / (max - min); constant columns map to 0. Out-of-range values are kept."""
    x = np.asarray(x, dtype=np.float64)
    span = np.where(params.degenerate, 1.0, params.max - params.min)
    return np.where(params.degenerate, 0.0, (x - params.min) / span)


def invert_minmax(params: ScalerParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(params.degenerate, params.min, x * (params.max - params.min) + params.min)


def condition_trip(raw: RawTrip, window: int = MA_WINDOW, seconds: int = TRIP_SECONDS) -> Trip:
    """Downsample, filter and cut one trip (no scaling)."""
    slow = downsample(raw, min_rows=seconds)
    values = truncate(moving_average(slow, window), seconds)
    return Trip(values, raw.label, raw.trip_id, raw.truth)


def scale_trip(params: ScalerParams, trip: Trip) -> Trip:
    return Trip(apply_minmax(params, trip.values), trip.label, trip.trip_id, trip.truth)


def preprocess_pipeline(raw_trips: Iterable[RawTrip],
                        fit_on: Callable[[Trip], bool] | Sequence[str] | None = None,
                        scaler: ScalerParams | None = None) -> tuple[list[Trip], ScalerParams]:
    """Condition every trip, fit MinMax on the chosen subset, scale everything.

    ``fit_on`` selects the fit subset, either as a predicate or as a list of
    trip ids; ``None`` means the labeled trips. Passing ``scaler`` skips the
    fit and reuses it.
    """
    conditioned = []
    for raw in raw_trips:
        try:
            conditioned.append(condition_trip(raw))
        except PreprocessError:
            raise
        except ContractError as exc:
            raise PreprocessError(f"trip {raw.trip_id!r}: {exc}") from exc

    if scaler is None:
        if fit_on is None:
            chosen = [t for t in conditioned if t.label is not None]
        elif callable(fit_on):
            chosen = [t for t in conditioned if fit_on(t)]
        else:
            ids = set(fit_on)
            chosen = [t for t in conditioned if t.trip_id in ids]
        if not chosen:
            raise ContractError("the MinMax fit subset is empty")
        scaler = fit_minmax(chosen)
    return [scale_trip(scaler, t) for t in conditioned], scaler


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def _comment_lines(comment: str | Sequence[str] | None) -> str:
    if not comment:
        return ""
    lines = [comment] if isinstance(comment, str) else list(comment)
    return "".join(f"# {line}\n" for line in lines)


def _trips_frame(trips: Iterable[RawTrip | Trip]) -> pd.DataFrame:
    frames = []
    for trip in trips:
        data = trip.samples if isinstance(trip, RawTrip) else trip.values
        data = np.asarray(data)
        frame = pd.DataFrame(data, columns=list(CHANNELS))
        frame.insert(0, "t", np.arange(data.shape[0]))
        frame.insert(0, "trip_id", trip.trip_id)
        frame["label"] = trip.label if trip.label is not None else UNLABELED
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["trip_id", "t", *CHANNELS, "label"])
    return pd.concat(frames, ignore_index=True)


def write_trips_csv(path: str | Path, trips: Iterable[RawTrip | Trip],
                    comment: str | Sequence[str] | None = None) -> None:
    """``trip_id,t,long_acc,lat_acc,pitch,yaw,roll,label``; floats round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(_comment_lines(comment))
        fh.write(",".join(["trip_id", "t", *CHANNELS, "label"]) + "\n")
        # one trip at a time, so a full-rate dataset never sits in memory twice
        for trip in trips:
            _trips_frame([trip]).to_csv(fh, index=False, header=False, float_format="%.17g",
                                        lineterminator="\n")


def _read_frame(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#", dtype={"trip_id": "category", "label": "category"},
                            float_precision="round_trip")
    except FileNotFoundError:
        raise
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise ContractError(f"{path}: malformed CSV ({exc})") from exc
    missing = {"trip_id", "t", *CHANNELS, "label"} - set(frame.columns)
    if missing:
        raise ContractError(f"{path}: missing columns {sorted(missing)}")
    return frame


def _split_frame(frame: pd.DataFrame, path, cls):
    out = []
    for trip_id, group in frame.groupby("trip_id", sort=False, observed=True):
        group = group.sort_values("t", kind="stable")
        labels = group["label"].unique()
        if len(labels) != 1:
            raise ContractError(f"{path}: trip {trip_id!r} has mixed labels")
        try:
            label = check_label(labels[0])
        except ContractError as exc:
            raise ContractError(f"{path}: trip {trip_id!r}: {exc}") from exc
        data = group[list(CHANNELS)].to_numpy(dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise ContractError(f"{path}: trip {trip_id!r} has non-finite samples")
        out.append(cls(data, label, str(trip_id)))
    return out


def read_raw_csv(path: str | Path) -> list[RawTrip]:
    return _split_frame(_read_frame(path), path, RawTrip)


def read_trips_csv(path: str | Path) -> list[Trip]:
    return _split_frame(_read_frame(path), path, Trip)


def write_truth_csv(path: str | Path, trips: Iterable[RawTrip | Trip],
                    comment: str | Sequence[str] | None = None) -> None:
    """Ground-truth class (``trip_id,class``) for every trip whose class is known."""
    rows = [(t.trip_id, t.true_class) for t in trips if t.true_class is not None]
    with Path(path).open("w", newline="") as fh:
        fh.write(_comment_lines(comment))
        fh.write("trip_id,class\n")
        for trip_id, cls in rows:
            fh.write(f"{trip_id},{cls}\n")


def read_truth_csv(path: str | Path) -> dict[str, str]:
    frame = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False)
    if list(frame.columns) != ["trip_id", "class"]:
        raise ContractError(f"{path}: expected columns trip_id,class")
    truth = dict(zip(frame["trip_id"], frame["class"]))
    for trip_id, cls in truth.items():
        if cls not in CLASSES:
            raise ContractError(f"{path}: trip {trip_id!r} has class {cls!r}")
    return truth


def attach_truth(trips: Iterable[RawTrip | Trip], truth: dict[str, str]) -> None:
    for trip in trips:
        if trip.trip_id in truth:
            trip.truth = truth[trip.trip_id]


def save_scaler(path: str | Path, params: ScalerParams, provenance: dict | None = None) -> None:
    obj = params.to_json()
    if provenance:
        obj["_provenance"] = provenance
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_scaler(path: str | Path) -> ScalerParams:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    return ScalerParams.from_json(obj)
