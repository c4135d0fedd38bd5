"""Nine per-channel statistics, flattened channel-major into 45 features.

Per channel the order is ``mean, median, mode, std, skewness, kurtosis,
p25, p75, iqr``. Moments are population moments (divide by L). Kurtosis is
the plain fourth standardized moment, not the excess.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .numerics import ContractError
from .preprocess import CHANNELS, UNLABELED, Trip, _comment_lines, check_label

STATS = ("mean", "median", "mode", "std", "skewness", "kurtosis", "p25", "p75", "iqr")
N_FEATURES = len(CHANNELS) * len(STATS)
MODE_BINS = 10


def feature_names() -> list[str]:
    return [f"{ch}_{stat}" for ch in CHANNELS for stat in STATS]


def _series(series) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractError("statistics need at least one value")
    return x


def mean_std(series) -> tuple[float, float]:
    x = _series(series)
    mu = x.mean()
    return float(mu), float(np.sqrt(np.mean((x - mu) ** 2)))


def _central_moment(x: np.ndarray, n: int) -> float:
    return float(np.mean((x - x.mean()) ** n))


def skewness(series) -> float:
    """Third standardized moment; 0 for a constant series."""
    x = _series(series)
    sigma = mean_std(x)[1]
    if sigma == 0.0:
        return 0.0
    return _central_moment(x, 3) / sigma ** 3


def kurtosis(series) -> float:
    """Fourth standardized moment (a normal sample gives about 3); 0 if constant."""
    x = _series(series)
    sigma = mean_std(x)[1]
    if sigma == 0.0:
        return 0.0
    return _central_moment(x, 4) / sigma ** 4


def percentile(series, p: float) -> float:
    """Linear interpolation between order statistics at rank (p/100)(L-1)."""
    if not 0.0 <= p <= 100.0:
        raise ContractError(f"percentile must lie in [0, 100], got {p}")
    x = np.sort(_series(series))
    rank = (p / 100.0) * (x.size - 1)
    lo = int(np.floor(rank))
    hi = min(lo + 1, x.size - 1)
    frac = rank - lo
    if frac == 0.0:
        return float(x[lo])
    return float(x[lo] + frac * (x[hi] - x[lo]))


def median(series) -> float:
    return percentile(series, 50.0)


def iqr(series) -> float:
    return percentile(series, 75.0) - percentile(series, 25.0)


def mode(series, bins: int = MODE_BINS) -> float:
    """Center of the fullest of ``bins`` equal-width bins over [min, max].

    A value sits in bin k when edge_k <= value, edge_k = min + k*width; the
    maximum lands in the last bin. Ties go to the lowest bin. A constant
    series returns its value.
    """
    x = _series(series)
    lo, hi = x.min(), x.max()
    if lo == hi:
        return float(lo)
    width = (hi - lo) / bins
    edges = lo + width * np.arange(bins)
    idx = np.searchsorted(edges, x, side="right") - 1
    counts = np.bincount(idx, minlength=bins)
    k = int(np.argmax(counts))
    return float(lo + (k + 0.5) * width)


def channel_stats(series) -> np.ndarray:
    x = _series(series)
    mu, sigma = mean_std(x)
    p25 = percentile(x, 25.0)
    p75 = percentile(x, 75.0)
    return np.array([mu, median(x), mode(x), sigma, skewness(x), kurtosis(x),
                     p25, p75, p75 - p25])


def extract_features(trip: Trip | np.ndarray) -> np.ndarray:
    values = trip.values if isinstance(trip, Trip) else np.asarray(trip, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(CHANNELS) or values.shape[0] < 1:
        raise ContractError(f"expected an (L, {len(CHANNELS)}) trip, got {values.shape}")
    return np.concatenate([channel_stats(values[:, c]) for c in range(values.shape[1])])


def feature_matrix(trips: Sequence[Trip]) -> np.ndarray:
    if not trips:
        return np.zeros((0, N_FEATURES))
    return np.stack([extract_features(t) for t in trips])


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def write_features_csv(path: str | Path, trips: Sequence[Trip], features: np.ndarray,
                       comment: str | Sequence[str] | None = None) -> Path:
    """``trip_id,label,f0..f44`` plus a ``<stem>.legend.csv`` naming each column.

    Returns the legend path.
    """
    path = Path(path)
    frame = pd.DataFrame(np.asarray(features), columns=[f"f{i}" for i in range(N_FEATURES)])
    frame.insert(0, "label", [t.label if t.label is not None else UNLABELED for t in trips])
    frame.insert(0, "trip_id", [t.trip_id for t in trips])
    with path.open("w", newline="") as fh:
        fh.write(_comment_lines(comment))
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")
    legend = path.with_name(path.stem + ".legend.csv")
    with legend.open("w", newline="") as fh:
        fh.write("column,channel,statistic\n")
        for i, (ch, stat) in enumerate((c, s) for c in CHANNELS for s in STATS):
            fh.write(f"f{i},{ch},{stat}\n")
    return legend


def read_features_csv(path: str | Path) -> tuple[list[str], list[str | None], np.ndarray]:
    """Returns (trip ids, labels with None for unlabeled, feature matrix)."""
    try:
        frame = pd.read_csv(path, comment="#", dtype={"trip_id": str, "label": str},
                            float_precision="round_trip")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ContractError(f"{path}: malformed CSV ({exc})") from exc
    cols = [f"f{i}" for i in range(N_FEATURES)]
    missing = {"trip_id", "label", *cols} - set(frame.columns)
    if missing:
        raise ContractError(f"{path}: missing columns {sorted(missing)[:5]}")
    labels = [check_label(lab) for lab in frame["label"]]
    X = frame[cols].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ContractError(f"{path}: non-finite feature values")
    return list(frame["trip_id"].astype(str)), labels, X
