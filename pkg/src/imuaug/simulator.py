"""Parametric stand-in for the driving-simulator recordings.

Each channel of a trip is three random-phase low-frequency sinusoids, white
noise, and smooth bumps (Hann windows) arriving as a Poisson process. The
aggressive profile has more frequent, larger and sharper bumps and somewhat
larger base motion.

A dataset is a list of :class:`TripPlan` entries: style, visible label,
hidden truth and a per-trip seed. Raw 1000 Hz samples are only materialized
on :meth:`TripPlan.realize`, so a 238-trip dataset never has to sit in memory
at full rate.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numerics import ContractError
from .preprocess import CHANNELS, CLASSES, RAW_RATE, RawTrip

N_SINES = 3


@dataclass(frozen=True)
class StyleProfile:
    name: str
    amplitude: tuple[float, ...]      # per channel, each sinusoid's amplitude
    freq_low: float                   # Hz
    freq_high: float                  # Hz
    noise_std: tuple[float, ...]      # per channel
    event_rate: float                 # events per minute
    event_amplitude: tuple[float, ...]  # per channel peak
    event_duration_ms: float

    def validate(self) -> None:
        n = len(CHANNELS)
        for name in ("amplitude", "noise_std", "event_amplitude"):
            vals = getattr(self, name)
            if len(vals) != n or min(vals) < 0:
                raise ContractError(f"profile {self.name}: {name} needs {n} non-negative values")
        if not 0 <= self.freq_low <= self.freq_high:
            raise ContractError(f"profile {self.name}: need 0 <= freq_low <= freq_high")
        if self.event_rate < 0 or self.event_duration_ms <= 0:
            raise ContractError(f"profile {self.name}: event rate/duration out of range")

    @classmethod
    def from_dict(cls, obj: dict) -> "StyleProfile":
        obj = dict(obj)
        for key in ("amplitude", "noise_std", "event_amplitude"):
            obj[key] = tuple(float(v) for v in obj[key])
        prof = cls(**obj)
        prof.validate()
        return prof


#                   long_acc lat_acc pitch  yaw   roll
NORMAL = StyleProfile(
    name="normal",
    amplitude=(0.40, 0.50, 0.010, 0.040, 0.010),
    freq_low=0.005, freq_high=0.05,
    noise_std=(0.05, 0.05, 0.002, 0.005, 0.002),
    event_rate=2.0,
    event_amplitude=(0.8, 0.8, 0.015, 0.06, 0.015),
    event_duration_ms=6000.0,
)

AGGRESSIVE = StyleProfile(
    name="aggressive",
    amplitude=(0.60, 0.75, 0.015, 0.060, 0.015),
    freq_low=0.005, freq_high=0.08,
    noise_std=(0.08, 0.08, 0.003, 0.008, 0.003),
    event_rate=8.0,
    event_amplitude=(2.5, 2.5, 0.045, 0.18, 0.045),
    event_duration_ms=4000.0,
)

DEFAULT_PROFILES = {"normal": NORMAL, "aggressive": AGGRESSIVE}


def load_profiles(path: str | Path) -> dict[str, StyleProfile]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    return profiles_from_dict(obj)


def profiles_from_dict(obj: dict) -> dict[str, StyleProfile]:
    profiles = dict(DEFAULT_PROFILES)
    for cls, prof in obj.items():
        if cls not in CLASSES:
            raise ContractError(f"profiles are keyed by class {CLASSES}, got {cls!r}")
        profiles[cls] = StyleProfile.from_dict({"name": cls, **prof})
    return profiles


def profiles_to_dict(profiles: dict[str, StyleProfile]) -> dict:
    return {cls: {k: v for k, v in asdict(p).items() if k != "name"}
            for cls, p in profiles.items()}


def _bump(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def simulate_trip(style: StyleProfile, rng: np.random.Generator, duration: float = 60.0,
                  rate: int = RAW_RATE, trip_id: str = "", label: str | None = None) -> RawTrip:
    """One raw trip of ``duration`` seconds at ``rate`` Hz, labeled with the style."""
    if duration <= 0:
        raise ContractError("trip duration must be positive")
    style.validate()
    T = int(round(duration * rate))
    C = len(CHANNELS)
    t = np.arange(T) / rate
    amp = np.asarray(style.amplitude)
    freqs = rng.uniform(style.freq_low, style.freq_high, size=(N_SINES, C))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(N_SINES, C))
    out = np.zeros((T, C))
    for k in range(N_SINES):
        out += amp * np.sin(2.0 * np.pi * freqs[k] * t[:, None] + phases[k])
    out += rng.standard_normal((T, C)) * np.asarray(style.noise_std)

    n_events = rng.poisson(style.event_rate * duration / 60.0)
    width = max(1, int(round(style.event_duration_ms * rate / 1000.0)))
    shape = _bump(width)
    ev_amp = np.asarray(style.event_amplitude)
    for _ in range(n_events):
        start = int(rng.integers(0, T))
        scale = rng.uniform(0.5, 1.0, size=C) * rng.choice((-1.0, 1.0), size=C) * ev_amp
        stop = min(T, start + width)
        out[start:stop] += shape[: stop - start, None] * scale
    return RawTrip(out, label if label is not None else style.name, trip_id)


@dataclass(frozen=True)
class TripPlan:
    trip_id: str
    style: str
    label: str | None    # None when the trip is handed out as unlabeled
    seed: int

    def realize(self, profiles: dict[str, StyleProfile] | None = None,
                duration: float = 60.0) -> RawTrip:
        profiles = profiles or DEFAULT_PROFILES
        raw = simulate_trip(profiles[self.style], np.random.default_rng(self.seed), duration,
                            trip_id=self.trip_id)
        raw.label = self.label
        raw.truth = self.style
        return raw


def simulate_dataset(n: int = 238, labeled: int = 60,
                     rng: np.random.Generator | None = None) -> list[TripPlan]:
    """Plans for ``n`` trips: ``labeled`` balanced labeled ones, the rest unlabeled.

    Styles alternate over the whole set, so the hidden classes are balanced to
    within one trip. The first ``labeled`` plans are the labeled ones.
    """
    if n < 1 or labeled < 0 or labeled > n or labeled % 2:
        raise ContractError(f"invalid counts n={n}, labeled={labeled} (labeled must be even and <= n)")
    if rng is None:
        rng = np.random.default_rng()
    seeds = rng.integers(0, 2**63, size=n)
    plans = []
    for k in range(n):
        is_labeled = k < labeled
        style = CLASSES[(k if is_labeled else k - labeled) % 2]
        plans.append(TripPlan(f"trip{k:04d}", style, style if is_labeled else None, int(seeds[k])))
    return plans
