import json

import pytest

from imuaug.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Small end-to-end pipeline: 12 trips, 8 labeled."""
    d = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--n", 12, "--labeled", 8, "--seed", 3, "--out", d / "sim") == 0
    assert run("preprocess", "--in", d / "sim/raw.csv", "--truth", d / "sim/ground_truth.csv",
               "--seed", 3, "--out", d / "pre") == 0
    assert run("features", "--in", d / "pre/processed.csv", "--seed", 3,
               "--out", d / "feat/features.csv") == 0
    assert run("pretrain-ae", "--in", d / "feat/features.csv", "--epochs", 3, "--seed", 3,
               "--out", d / "ae.json") == 0
    assert run("train-classifier", "--ae", d / "ae.json", "--train", d / "feat/features.csv",
               "--val", d / "feat/features.csv", "--set", "epochs=[5]", "--set", "learning_rates=[0.01]",
               "--seed", 3, "--out", d / "clf.json") == 0
    assert run("evaluate", "--model", d / "clf.json", "--in", d / "feat/features.csv",
               "--truth", d / "sim/ground_truth.csv", "--seed", 3, "--out", d / "eval") == 0
    return d


def test_simulate_counts_and_provenance(pipeline):
    lines = (pipeline / "sim/raw.csv").read_text().splitlines()
    assert lines[0].startswith("# imuaug version=") and "seed=3" in lines[0]
    truth = (pipeline / "sim/ground_truth.csv").read_text().splitlines()
    assert sum(not l.startswith("#") for l in truth) == 1 + 12


def test_processed_and_features(pipeline):
    body = [l for l in (pipeline / "pre/processed.csv").read_text().splitlines()
            if not l.startswith("#")]
    assert len(body) == 1 + 12 * 60
    scaler = json.loads((pipeline / "pre/scaler.json").read_text())
    assert scaler["_provenance"]["seed"] == 3
    feat = [l for l in (pipeline / "feat/features.csv").read_text().splitlines()
            if not l.startswith("#")]
    assert len(feat) == 13 and len(feat[0].split(",")) == 2 + 45
    legend = (pipeline / "feat/features.legend.csv").read_text().splitlines()
    assert len(legend) == 46


def test_evaluate_outputs(pipeline):
    value = float((pipeline / "eval/auroc.txt").read_text())
    assert 0.0 <= value <= 1.0
    scores = (pipeline / "eval/scores.csv").read_text().splitlines()
    assert scores[0].startswith("#") and sum(not l.startswith("#") for l in scores) == 13
    clf = json.loads((pipeline / "clf.json").read_text())
    assert clf["config"]["epochs"] == 5 and len(clf["validation_table"]) == 3


def test_repeat_invocation_is_bitwise_identical(pipeline, tmp_path):
    for k in (1, 2):
        assert run("pretrain-ae", "--in", pipeline / "feat/features.csv", "--epochs", 3,
                   "--seed", 3, "--out", tmp_path / f"ae{k}.json") == 0
    assert (tmp_path / "ae1.json").read_bytes() == (tmp_path / "ae2.json").read_bytes()
    assert (tmp_path / "ae1.json").read_bytes() == (pipeline / "ae.json").read_bytes()


def test_gan_train_and_generate(pipeline, tmp_path):
    assert run("train-gan", "--in", pipeline / "pre/processed.csv", "--epochs", 1, "--hidden", 4,
               "--latent", 2, "--seed", 1, "--out", tmp_path / "gan") == 0
    assert run("generate", "--model", tmp_path / "gan/generator.json", "--ratio", 0.5,
               "--base", 8, "--seed", 1, "--out", tmp_path / "fake.csv") == 0
    body = [l for l in (tmp_path / "fake.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 1 + 4 * 60
    assert run("generate", "--model", tmp_path / "gan/discriminator.json", "--seed", 1,
               "--out", tmp_path / "bad.csv") == 1


def test_experiment_and_report(tmp_path):
    args = ["experiment", "--runs", 2, "--skip-gan", "--seed", 5, "--set", "n_trips=12",
            "--set", "labeled=8", "--set", "ae_epochs=2", "--set", "grid.epochs=[5]",
            "--set", "grid.learning_rates=[0.01]", "--set", "grid.activations=[\"tanh\"]"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("run_0.csv", "run_1.csv", "aggregate.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run("report", "--in", tmp_path / "a", "--format", "csv", "--seed", 5,
               "--out", tmp_path / "r") == 0
    assert (tmp_path / "r/aggregate.csv").read_bytes() == (tmp_path / "a/aggregate.csv").read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert run("simulate", "--n", 3) == 2                           # missing --out
    assert run("no-such-command") == 2
    assert run("features", "--in", tmp_path / "missing.csv", "--out", tmp_path / "f.csv") == 1
    assert run("simulate", "--n", 4, "--labeled", 3, "--out", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("experiment", "--config", bad, "--out", tmp_path / "e") == 1
    assert run("report", "--in", tmp_path, "--out", tmp_path / "r") == 1
    err = capsys.readouterr().err
    assert "error" in err
