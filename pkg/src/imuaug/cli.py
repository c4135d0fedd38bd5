"""imuaug command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error (bad data, failed stage), 2 usage error.
All randomness derives from ``--seed``; every output file starts with a
provenance comment (or a ``_provenance`` key for JSON).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .features import feature_matrix, read_features_csv, write_features_csv
from .harness import (ExperimentConfig, apply_overrides, emit_report, provenance, read_run_csv,
                      run_experiments)
from .numerics import ContractError, NonFiniteError, ParamVector, fmt_float
from .preprocess import (attach_truth, fit_minmax, apply_minmax, load_scaler, preprocess_pipeline,
                         read_raw_csv, read_trips_csv, read_truth_csv, save_scaler,
                         write_trips_csv, write_truth_csv, ScalerParams, Trip)
from .rcgan import (GeneratorNet, RcganConfig, load_checkpoint, save_checkpoint, synthesize,
                    train_rcgan)
from .semisup import (Autoencoder, Classifier, GridSpec, auroc, grid_search, load_model, predict,
                      save_model, train_autoencoder)
from .simulator import DEFAULT_PROFILES, load_profiles, simulate_dataset

log = logging.getLogger("imuaug")

DEFAULT_SEED = 20240601
SUBCOMMANDS = ("simulate", "preprocess", "train-gan", "generate", "features", "pretrain-ae",
               "train-classifier", "evaluate", "experiment", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _meta(args) -> dict:
    return {"tool": "imuaug", "version": __version__, "seed": args.seed}


def _comment(args, *extra: str) -> list[str]:
    return provenance(args.seed, " ".join(extra) if extra else None)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"{args.config}: malformed JSON at line {exc.lineno}, "
                                f"column {exc.colno}") from exc
    return apply_overrides(cfg, getattr(args, "set", None) or [])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    profiles = load_profiles(args.profiles) if args.profiles else DEFAULT_PROFILES
    n = args.n if args.n is not None else cfg.get("n", 238)
    labeled = args.labeled if args.labeled is not None else cfg.get("labeled", 60)
    plans = simulate_dataset(n, labeled, np.random.default_rng(args.seed))
    out = _out_dir(args.out)
    # realized lazily; only the truth rows are kept
    truth = []

    def realize():
        for plan in plans:
            raw = plan.realize(profiles, args.duration)
            truth.append(Trip(np.empty((0, 0)), raw.label, raw.trip_id, raw.truth))
            yield raw

    write_trips_csv(out / "raw.csv", realize(), _comment(args, "rate_hz=1000"))
    write_truth_csv(out / "ground_truth.csv", truth, _comment(args))
    print(f"wrote {len(plans)} trips to {out / 'raw.csv'}")


def cmd_preprocess(args) -> None:
    raws = read_raw_csv(args.inp)
    if args.truth:
        attach_truth(raws, read_truth_csv(args.truth))
    scaler = load_scaler(args.scaler) if args.scaler else None
    fit_on = {"labeled": lambda t: t.label is not None,
              "unlabeled": lambda t: t.label is None,
              "all": lambda t: True}[args.fit_on]
    trips, scaler = preprocess_pipeline(raws, fit_on=fit_on, scaler=scaler)
    out = _out_dir(args.out)
    write_trips_csv(out / "processed.csv", trips, _comment(args, "rate_hz=1"))
    save_scaler(out / "scaler.json", scaler, _meta(args))
    print(f"wrote {len(trips)} processed trips to {out / 'processed.csv'}")


def _labeled(trips):
    return [t for t in trips if t.label is not None]


def cmd_train_gan(args) -> None:
    cfg = _load_config(args)
    gan_cfg = RcganConfig.from_dict({**cfg.get("rcgan", cfg), "seed": args.seed})
    for name in ("epochs", "hidden", "latent"):
        if getattr(args, name) is not None:
            gan_cfg = replace(gan_cfg, **{name: getattr(args, name)})
    trips = _labeled(read_trips_csv(args.inp))
    gen, disc, history = train_rcgan(trips, gan_cfg, np.random.default_rng(args.seed))
    out = _out_dir(args.out)
    save_checkpoint(out / "generator.json", gen, gan_cfg, _meta(args))
    save_checkpoint(out / "discriminator.json", disc, gan_cfg, _meta(args))
    history.to_csv(out / "loss_history.csv", _comment(args))
    print(f"trained RCGAN on {len(trips)} trips for {gan_cfg.epochs} epochs")


def cmd_generate(args) -> None:
    net, cfg = load_checkpoint(args.model)
    if not isinstance(net, GeneratorNet):
        raise ContractError(f"{args.model} is not a generator checkpoint")
    trips = synthesize(net, args.ratio, args.base, np.random.default_rng(args.seed),
                       seq_len=cfg.seq_len)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_trips_csv(args.out, trips, _comment(args, f"ratio={args.ratio:g} base={args.base}"))
    print(f"wrote {len(trips)} synthetic trips to {args.out}")


def cmd_features(args) -> None:
    trips = read_trips_csv(args.inp)
    X = feature_matrix(trips)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    legend = write_features_csv(args.out, trips, X, _comment(args))
    print(f"wrote {X.shape[0]}x{X.shape[1]} features to {args.out} (legend {legend})")


def cmd_pretrain_ae(args) -> None:
    _, labels, X = read_features_csv(args.inp)
    mask = np.array([lab is None for lab in labels]) if not args.all_rows else np.ones(len(labels), bool)
    if not mask.any():
        raise ContractError(f"{args.inp}: no unlabeled rows to pretrain on (use --all-rows)")
    scaler = fit_minmax(X[mask])
    ae, history = train_autoencoder(apply_minmax(scaler, X[mask]), args.epochs, args.lr,
                                    np.random.default_rng(args.seed))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, {"kind": "autoencoder", "dims": list(ae.dims),
                          "params": ae.params.to_json(), "feature_scaler": scaler.to_json(),
                          "loss_history": history, "_provenance": _meta(args)})
    print(f"pretrained autoencoder on {int(mask.sum())} rows, final loss {history[-1]:.5f}"
          if history else "autoencoder left at initialization (0 epochs)")


def _load_ae(path) -> tuple[Autoencoder, ScalerParams]:
    obj = load_model(path)
    if obj.get("kind") != "autoencoder":
        raise ContractError(f"{path} is not an autoencoder checkpoint")
    return (Autoencoder(ParamVector.from_json(obj["params"]), tuple(obj["dims"])),
            ScalerParams.from_json(obj["feature_scaler"]))


def _labeled_rows(path):
    ids, labels, X = read_features_csv(path)
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    return [ids[i] for i in keep], [labels[i] for i in keep], X[keep]


def cmd_train_classifier(args) -> None:
    ae, scaler = _load_ae(args.ae)
    cfg = _load_config(args)
    grid = GridSpec.from_dict(cfg.get("grid", cfg))
    _, tr_y, tr_X = _labeled_rows(args.train)
    _, va_y, va_X = _labeled_rows(args.val)
    found = grid_search(ae, apply_minmax(scaler, tr_X), tr_y, apply_minmax(scaler, va_X), va_y,
                        grid, np.random.default_rng(args.seed))
    lr, epochs, act = found.config
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(args.out, {
        "kind": "classifier", "model": found.model.to_json(),
        "feature_scaler": scaler.to_json(),
        "config": {"lr": lr, "epochs": epochs, "activation": act},
        "validation_table": [{"lr": c[0], "epochs": c[1], "activation": c[2], "auroc": a}
                             for c, a in found.table],
        "_provenance": _meta(args)})
    print(f"selected lr={lr:g} epochs={epochs} activation={act} (validation AUROC {found.val_auroc:.4f})")


def cmd_evaluate(args) -> None:
    obj = load_model(args.model)
    if obj.get("kind") != "classifier":
        raise ContractError(f"{args.model} is not a classifier checkpoint")
    model = Classifier.from_json(obj["model"])
    scaler = ScalerParams.from_json(obj["feature_scaler"])
    ids, labels, X = read_features_csv(args.inp)
    if args.truth:
        truth = read_truth_csv(args.truth)
        labels = [truth.get(i, lab) for i, lab in zip(ids, labels)]
    keep = [k for k, lab in enumerate(labels) if lab is not None]
    if len(keep) < len(labels):
        log.warning("%d rows without a class are skipped", len(labels) - len(keep))
    scores = predict(model, apply_minmax(scaler, X[keep]))
    value, curve = auroc(scores, [labels[k] for k in keep])
    out = _out_dir(args.out)
    curve.to_csv(out / "roc.csv", _comment(args))
    with (out / "scores.csv").open("w") as fh:
        fh.write("".join(f"# {line}\n" for line in _comment(args)))
        fh.write("trip_id,label,p_aggressive\n")
        for k, s in zip(keep, scores):
            fh.write(f"{ids[k]},{labels[k]},{fmt_float(s)}\n")
    (out / "auroc.txt").write_text(f"{fmt_float(value)}\n")
    print(f"AUROC {value:.4f} on {len(keep)} trips")


def _experiment_config(args) -> ExperimentConfig:
    cfg = _load_config(args)
    if args.runs is not None:
        cfg["runs"] = args.runs
    cfg["seed"] = args.seed
    if args.gan_epochs is not None:
        cfg.setdefault("rcgan", {})["epochs"] = args.gan_epochs
    if args.skip_gan:
        cfg["skip_gan"] = True
    if "runs" not in cfg:
        cfg["runs"] = 20
    return ExperimentConfig.from_dict(cfg)


def cmd_experiment(args) -> None:
    config = _experiment_config(args)
    results = run_experiments(config, jobs=args.jobs)
    out = _out_dir(args.out)
    report = emit_report(results, out, seed=args.seed, write_roc=config.write_roc)
    (out / "config.json").write_text(json.dumps({**config.to_dict(), "_provenance": _meta(args)},
                                                indent=1) + "\n")
    print(f"{report.n_runs} runs; {report.n_improved} beat their baseline in at least one cell")


def cmd_report(args) -> None:
    paths = sorted(Path(args.inp).glob("run_*.csv"),
                   key=lambda p: (len(p.stem), p.stem))
    paths = [p for p in paths if not p.stem.endswith("_gan_loss")]
    if not paths:
        raise ContractError(f"no run_<k>.csv files in {args.inp}")
    results = [read_run_csv(p) for p in paths]
    report = emit_report(results, _out_dir(args.out), formats=args.format, seed=args.seed,
                         write_roc=False)
    print(f"aggregated {report.n_runs} runs into {args.out}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"seed for all randomness (default {DEFAULT_SEED})")
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable (dotted keys reach sections)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="imuaug", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"imuaug {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate raw 1000 Hz trips")
    s.add_argument("--n", type=int)
    s.add_argument("--labeled", type=int)
    s.add_argument("--duration", type=float, default=60.0, help="seconds per trip")
    s.add_argument("--profiles", help="JSON style profiles keyed by class")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", parents=[common], help="downsample, filter, cut and scale")
    s.add_argument("--in", dest="inp", required=True, help="raw trip CSV")
    s.add_argument("--truth", help="ground-truth CSV to carry along")
    s.add_argument("--fit-on", choices=("labeled", "unlabeled", "all"), default="labeled")
    s.add_argument("--scaler", help="reuse a fitted scaler JSON instead of fitting")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train-gan", parents=[common], help="train the RCGAN on labeled trips")
    s.add_argument("--in", dest="inp", required=True, help="processed trip CSV")
    s.add_argument("--epochs", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--latent", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("generate", parents=[common], help="synthesize labeled trips")
    s.add_argument("--model", required=True, help="generator checkpoint JSON")
    s.add_argument("--ratio", type=float, default=1.0)
    s.add_argument("--base", type=int, default=60, help="real trip count the ratio refers to")
    s.add_argument("--out", required=True, help="output trip CSV")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("features", parents=[common], help="45 statistical features per trip")
    s.add_argument("--in", dest="inp", required=True, help="processed trip CSV")
    s.add_argument("--out", required=True, help="output feature CSV")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("pretrain-ae", parents=[common], help="train the autoencoder")
    s.add_argument("--in", dest="inp", required=True, help="feature CSV (unlabeled rows used)")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--all-rows", action="store_true", help="train on every row, labeled or not")
    s.add_argument("--out", required=True, help="output checkpoint JSON")
    s.set_defaults(func=cmd_pretrain_ae)

    s = sub.add_parser("train-classifier", parents=[common], help="grid-searched fine-tuning")
    s.add_argument("--ae", required=True, help="autoencoder checkpoint JSON")
    s.add_argument("--train", required=True, help="feature CSV with labeled training rows")
    s.add_argument("--val", required=True, help="feature CSV with labeled validation rows")
    s.add_argument("--out", required=True, help="output checkpoint JSON")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("evaluate", parents=[common], help="AUROC and ROC curve of a classifier")
    s.add_argument("--model", required=True, help="classifier checkpoint JSON")
    s.add_argument("--in", dest="inp", required=True, help="feature CSV")
    s.add_argument("--truth", help="ground-truth CSV for unlabeled rows")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", parents=[common], help="full combination-grid protocol")
    s.add_argument("--runs", type=int)
    s.add_argument("--gan-epochs", type=int, help="shortcut for --set rcgan.epochs=N")
    s.add_argument("--skip-gan", action="store_true", help="baseline cell only, no RCGAN")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", parents=[common], help="re-aggregate run_<k>.csv files")
    s.add_argument("--in", dest="inp", required=True, help="directory holding run_<k>.csv")
    s.add_argument("--format", nargs="+", choices=("csv", "markdown"), default=["csv", "markdown"])
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ContractError, NonFiniteError, FileNotFoundError, OSError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
