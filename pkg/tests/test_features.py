import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from imuaug.features import (N_FEATURES, STATS, extract_features, feature_matrix, feature_names,
                             iqr, kurtosis, mean_std, median, mode, percentile, read_features_csv,
                             skewness, write_features_csv)
from imuaug.numerics import ContractError
from imuaug.preprocess import Trip


def test_mean_std_examples():
    mu, sigma = mean_std([1, 2, 3])
    assert mu == 2 and sigma == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert mean_std([4.0] * 7)[1] == 0.0
    assert mean_std([-1, 1]) == (0.0, 1.0)


def test_mode_examples():
    assert mode([3.3] * 5) == 3.3
    assert mode([1, 1, 2]) == pytest.approx(1.05, abs=1e-15)
    assert mode(np.arange(10.0)) == pytest.approx(0.45, abs=1e-15)


def test_skewness_and_kurtosis_examples():
    assert skewness([1, 2, 3]) == 0.0
    assert skewness([0, 0, 0, 4]) == 2 / math.sqrt(3)
    assert skewness([2.0] * 4) == 0.0
    assert kurtosis([-1, 1]) == 1.0
    assert kurtosis([5.0] * 3) == 0.0


def test_kurtosis_of_normal_sample():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert 2.9 < kurtosis(x) < 3.1


def test_percentile_examples():
    x = [4.0, -2.0, 7.5, 1.0]
    assert percentile(x, 0) == -2.0 and percentile(x, 100) == 7.5
    assert percentile([1, 2, 3, 4], 50) == 2.5
    assert percentile([0, 1, 2, 3], 25) == 0.75
    assert iqr([0, 1, 2, 3]) == 1.5
    assert iqr([9.0] * 5) == 0.0
    with pytest.raises(ContractError):
        percentile(x, 101)


def test_empty_series_rejected():
    for fn in (mean_std, mode, median, skewness):
        with pytest.raises(ContractError):
            fn([])


def test_constant_trip_features():
    f = extract_features(np.full((60, 5), 0.25))
    assert f.shape == (N_FEATURES,)
    for c in range(5):
        np.testing.assert_array_equal(f[9 * c:9 * c + 9], [0.25, 0.25, 0.25, 0, 0, 0, 0.25, 0.25, 0])


def test_feature_layout(rng):
    X = rng.random((60, 5))
    f = extract_features(X)
    names = feature_names()
    assert len(names) == 45 and names[0] == "long_acc_mean" and names[-1] == "roll_iqr"
    for c in range(5):
        block = dict(zip(STATS, f[9 * c:9 * c + 9]))
        assert block["iqr"] == block["p75"] - block["p25"]
        assert block["p25"] <= block["median"] <= block["p75"]
        assert block["mean"] == pytest.approx(X[:, c].mean(), abs=1e-15)
    with pytest.raises(ContractError):
        extract_features(np.zeros((60, 4)))


@pytest.mark.parametrize("seed", range(50))
def test_channel_stats_match_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=int(rng.integers(1, 80))) * rng.uniform(0.1, 10)
    f = extract_features(np.repeat(x[:, None], 5, axis=1))[:9]
    np.testing.assert_allclose(f, oracles.stats(list(x)), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 60), elements=st.floats(-100, 100)),
       st.floats(-50, 50))
def test_shift_equivariance(x, c):
    if np.ptp(x) < 1e-3:
        return   # near-constant series make the standardized moments ill-conditioned
    a = extract_features(np.repeat(x[:, None], 5, axis=1))[:9]
    b = extract_features(np.repeat((x + c)[:, None], 5, axis=1))[:9]
    shifted = [0, 1, 2, 6, 7]
    same = [3, 8]
    scale = max(1.0, np.abs(x).max(), abs(c))
    np.testing.assert_allclose(b[shifted], a[shifted] + c, rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(b[same], a[same], rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(b[[4, 5]], a[[4, 5]], rtol=0, atol=1e-9 * scale)


def test_feature_matrix_and_csv(tmp_path, rng):
    trips = [Trip(rng.random((60, 5)), lab, f"q{k}") for k, lab in enumerate(["normal", None])]
    X = feature_matrix(trips)
    assert X.shape == (2, 45)
    assert feature_matrix([]).shape == (0, 45)
    legend = write_features_csv(tmp_path / "f.csv", trips, X, "imuaug version=0 seed=3")
    ids, labels, Y = read_features_csv(tmp_path / "f.csv")
    assert ids == ["q0", "q1"] and labels == ["normal", None]
    assert Y.tobytes() == X.tobytes()
    rows = legend.read_text().splitlines()
    assert rows[0] == "column,channel,statistic" and rows[1] == "f0,long_acc,mean"
    assert len(rows) == 46
