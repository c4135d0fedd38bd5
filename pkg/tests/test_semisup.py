import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from imuaug.numerics import ContractError, max_relative_error, numeric_gradient
from imuaug.semisup import (Autoencoder, Classifier, GridSpec, ae_loss_grad, auroc,
                            classifier_loss_grad, encode_labels, grid_search, predict,
                            train_autoencoder, train_classifier, transfer_weights)

SMALL = (6, 4, 2, 4, 6)


def random_ae(rng, dims=SMALL, scale=0.5):
    ae = Autoencoder.init(rng, dims)
    return Autoencoder(ae.params.with_values(rng.uniform(-scale, scale, len(ae.params))), dims)


# -- autoencoder -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_ae_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ae = random_ae(rng)
    S = rng.random((7, 6))
    _, grad = ae_loss_grad(ae, S)
    num = numeric_gradient(lambda p: ae_loss_grad(Autoencoder(p, SMALL), S)[0], ae.params)
    assert max_relative_error(grad.values, num.values) <= 1e-4


def test_ae_loss_is_mean_squared_l2(rng):
    ae = random_ae(rng)
    S = rng.random((5, 6))
    loss, _ = ae_loss_grad(ae, S)
    R = ae.reconstruct(S)
    assert loss == pytest.approx(np.mean([np.sum((R[k] - S[k]) ** 2) for k in range(5)]), rel=1e-14)


def test_ae_zero_epochs_and_training_progress():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        S = rng.random((30, 6))
        init = Autoencoder.init(rng, SMALL)
        same, hist0 = train_autoencoder(S, 0, 0.01, init=init)
        assert same.params.values.tobytes() == init.params.values.tobytes() and hist0 == []
        _, hist = train_autoencoder(S, 200, 0.01, init=init)
        assert hist[-1] < hist[0]


def test_ae_default_dims(rng):
    ae = Autoencoder.init(rng)
    assert ae.dims == (45, 100, 50, 100, 45)
    assert ae.encode(np.zeros((2, 45))).shape == (2, 50)
    with pytest.raises(ContractError):
        train_autoencoder(np.zeros((0, 45)), 1, rng=rng)


# -- transfer and classifier ---------------------------------------------------------

def test_transfer_copies_hidden_layers(rng):
    ae = random_ae(rng)
    a = transfer_weights(ae, "tanh", np.random.default_rng(1))
    b = transfer_weights(ae, "tanh", np.random.default_rng(2))
    for k in (1, 2, 3):
        assert a.params[f"W{k}"].tobytes() == ae.params[f"W{k}"].tobytes()
        assert a.params[f"b{k}"].tobytes() == ae.params[f"b{k}"].tobytes()
        assert a.params[f"W{k}"].tobytes() == b.params[f"W{k}"].tobytes()
    assert a.params["W4"].shape == (2, 4) and a.params["b4"].shape == (2,)
    assert not np.array_equal(a.params["W4"], b.params["W4"])
    assert np.all(np.abs(a.params["W4"]) <= 0.08)
    full = transfer_weights(Autoencoder.init(rng), "tanh", rng)
    assert full.params["W4"].shape == (2, 100)


def test_transfer_zero_epochs_reproduces_encoder(rng):
    ae = random_ae(rng)
    clf = transfer_weights(ae, "tanh", rng)
    S = rng.random((9, 6))
    same = train_classifier(clf, S, [0, 1] * 4 + [1], 0, 0.01)
    assert same.params.values.tobytes() == clf.params.values.tobytes()
    assert same.hidden_activations(S)[1].tobytes() == ae.encode(S).tobytes()


def test_maxout_effective_widths(rng):
    ae = random_ae(rng, (6, 8, 4, 8, 6))
    clf = transfer_weights(ae, "maxout", rng)
    acts = clf.hidden_activations(rng.random((3, 6)))
    assert [a.shape[1] for a in acts] == [8, 4, 8]
    # each pair holds one value, so the distinct widths are halved
    assert [len(np.unique(a[0])) <= a.shape[1] // 2 for a in acts] == [True] * 3
    for a in acts:
        np.testing.assert_array_equal(a[:, 0::2], a[:, 1::2])
    with pytest.raises(ContractError):
        transfer_weights(random_ae(rng, (6, 5, 2, 4, 6)), "maxout", rng)


@pytest.mark.parametrize("kind", ["tanh", "maxout", "rectifier"])
@pytest.mark.parametrize("seed", range(2))
def test_classifier_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    clf = transfer_weights(random_ae(rng), kind, rng)
    clf = Classifier(clf.params.with_values(rng.uniform(-0.8, 0.8, len(clf.params))), kind, clf.dims)
    S = rng.random((8, 6))
    y = np.array([0, 1] * 4)
    _, grad = classifier_loss_grad(clf, S, y)
    num = numeric_gradient(lambda p: classifier_loss_grad(Classifier(p, kind, clf.dims), S, y)[0],
                           clf.params)
    assert max_relative_error(grad.values, num.values) <= 1e-4


def test_classifier_separable_toy_reaches_auroc_one():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(-1, 0.3, (20, 2)), rng.normal(1, 0.3, (20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    ae = random_ae(rng, (2, 8, 4, 8, 2), 0.3)
    model = train_classifier(transfer_weights(ae, "tanh", rng), X, y, 500, 0.01)
    assert auroc(predict(model, X), y)[0] == 1.0


def test_classifier_needs_both_classes(rng):
    clf = transfer_weights(random_ae(rng), "tanh", rng)
    with pytest.raises(ContractError):
        train_classifier(clf, rng.random((4, 6)), ["normal"] * 4, 10, 0.01)


def test_snapshots_equal_separate_runs(rng):
    clf = transfer_weights(random_ae(rng), "rectifier", rng)
    S, y = rng.random((10, 6)), [0, 1] * 5
    snaps = train_classifier(clf, S, y, 30, 0.01, snapshots=(10, 30))
    alone = train_classifier(clf, S, y, 10, 0.01)
    assert snaps[10].params.values.tobytes() == alone.params.values.tobytes()


def test_predict_contract(rng):
    ae = random_ae(rng)
    zero = Classifier(transfer_weights(ae, "tanh", rng).params.zeros_like(), "tanh", SMALL[:4] + (2,))
    assert predict(zero, np.ones(6)) == 0.5
    clf = transfer_weights(ae, "tanh", rng)
    p = predict(clf, rng.random((4, 6)))
    assert p.shape == (4,) and np.all((p > 0) & (p < 1))
    with pytest.raises(ContractError):
        predict(clf, np.ones(5))


def test_classifier_json_roundtrip(rng):
    clf = transfer_weights(random_ae(rng), "maxout", rng)
    back = Classifier.from_json(clf.to_json())
    assert back.activation == "maxout" and back.params.values.tobytes() == clf.params.values.tobytes()


def test_encode_labels():
    np.testing.assert_array_equal(encode_labels(["normal", "aggressive"]), [0, 1])
    with pytest.raises(ContractError):
        encode_labels(["normal", "calm"])


# -- grid search ------------------------------------------------------------------

def _grid_data(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((16, 6))
    y = np.array([0, 1] * 8)
    X[y == 1] += 0.3
    return rng, X[:10], y[:10], X[10:], y[10:]


def test_grid_table_and_selection():
    rng, trX, trY, vaX, vaY = _grid_data(0)
    grid = GridSpec(epochs=(5, 10, 20))
    res = grid_search(random_ae(rng), trX, trY, vaX, vaY, grid, np.random.default_rng(3))
    assert len(res.table) == 27
    assert res.val_auroc == max(s for _, s in res.table)
    # first config (in tie-break order) reaching the max is selected
    first = next(c for c, s in res.table if s == res.val_auroc)
    assert res.config == first
    assert [c for c, _ in res.table] == grid.configs()


def test_grid_is_deterministic():
    out = []
    for _ in range(2):
        rng, trX, trY, vaX, vaY = _grid_data(1)
        res = grid_search(random_ae(rng), trX, trY, vaX, vaY, GridSpec(epochs=(3, 6, 9)),
                          np.random.default_rng(7))
        out.append((res.config, res.table, res.model.params.values.tobytes()))
    assert out[0] == out[1]


def test_grid_spec_order():
    configs = GridSpec(learning_rates=(0.1, 0.001, 0.01)).configs()
    assert configs[0] == (0.001, 100, "tanh") and configs[1] == (0.001, 100, "maxout")
    assert configs[3] == (0.001, 200, "tanh") and configs[-1] == (0.1, 500, "rectifier")


# -- AUROC --------------------------------------------------------------------------

def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])[0] == 0.75
    assert auroc([0.2, 0.3, 0.8, 0.9], [0, 0, 1, 1])[0] == 1.0
    assert auroc([0.5] * 6, [0, 1] * 3)[0] == 0.5
    with pytest.raises(ContractError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6).map(lambda k: k / 6), st.booleans()),
                min_size=2, max_size=20))
def test_auroc_matches_pairwise_oracle(pairs):
    scores = [s for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if len(set(labels)) < 2:
        return
    auc, curve = auroc(scores, labels)
    assert auc == oracles.auroc_pairs(scores, labels)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert curve.fpr[0] == curve.tpr[0] == 0 and curve.fpr[-1] == curve.tpr[-1] == 1
    s = np.array(scores)
    assert auroc(np.exp(3 * s), labels)[0] == auc
    assert auroc(2.5 * s - 7, labels)[0] == auc


def test_auroc_complement_without_ties(rng):
    s = rng.random(15)
    y = [0, 1] * 7 + [1]
    assert auroc(s, y)[0] + auroc(-s, y)[0] == pytest.approx(1.0, abs=1e-15)


def test_roc_curve_points_and_csv(tmp_path):
    _, curve = auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert curve.thresholds[0] == np.inf
    np.testing.assert_array_equal(curve.fpr, [0, 0, 0.5, 0.5, 1])
    np.testing.assert_array_equal(curve.tpr, [0, 0.5, 0.5, 1, 1])
    curve.to_csv(tmp_path / "roc.csv", "imuaug version=0 seed=0")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[1] == "threshold,fpr,tpr" and lines[2] == "inf,0.0,0.0" and lines[3] == "0.8,0.0,0.5"
