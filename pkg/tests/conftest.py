import numpy as np
import pytest

from imuaug.preprocess import CHANNELS, Trip


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_trips(rng, n_per_class=3, length=60):
    """Tiny balanced set of processed-looking trips in [0, 1]."""
    trips = []
    for k in range(2 * n_per_class):
        label = ("normal", "aggressive")[k % 2]
        spread = 0.1 if label == "normal" else 0.3
        values = np.clip(0.5 + spread * rng.standard_normal((length, len(CHANNELS))), 0, 1)
        trips.append(Trip(values, label, f"t{k:03d}"))
    return trips
