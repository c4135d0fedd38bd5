"""Extrinsic evaluation protocol: real/fake train-validation combinations.

One run trains an RCGAN on the labeled real trips R, synthesizes fake sets F
at each ratio, pretrains the autoencoder on the unlabeled trips, and for every
cell of the combination grid grid-searches a classifier and scores it on all
real trips. Note that the test set therefore overlaps the classifier's
training data; the protocol is reproduced as is.

Set semantics inside a run: R is split once, stratified, into halves R_tr
and R_val. F (|F| = ratio * |R|) is split into stratified halves only when it
appears on both sides, otherwise it goes whole to the one side using it. "R"
on the training side means R_tr and on the validation side R_val, so training
and validation never share a trip.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .features import feature_matrix
from .numerics import ContractError, fmt_float
from .preprocess import (CLASSES, Trip, _comment_lines, apply_minmax, attach_truth, fit_minmax,
                         preprocess_pipeline, read_raw_csv, read_truth_csv)
from .rcgan import LossHistory, RcganConfig, synthesize, train_rcgan
from .semisup import GridSpec, auroc, grid_search, predict, train_autoencoder
from .simulator import profiles_from_dict, simulate_dataset

log = logging.getLogger(__name__)

SOURCES = ("R", "F", "RF")
# row order of the per-run report
PAIRS = (("RF", "RF"), ("R", "F"), ("F", "R"), ("RF", "R"),
         ("F", "F"), ("R", "RF"), ("F", "RF"), ("RF", "F"))
RATIOS = (0.5, 1.0, 1.5)
PROTOCOL_NOTE = ("test AUROC is computed on all real trips, which include the "
                 "classifier's own training and validation trips")


@dataclass(frozen=True)
class CombinationSpec:
    train: str
    val: str
    ratio: float

    def __post_init__(self):
        if self.train not in SOURCES or self.val not in SOURCES:
            raise ContractError(f"sources must be in {SOURCES}, got {self.train}/{self.val}")
        if self.ratio < 0:
            raise ContractError("ratio must be non-negative")
        if self.ratio == 0 and ("F" in self.train or "F" in self.val):
            raise ContractError("a cell using fakes needs a positive ratio")

    @property
    def is_baseline(self) -> bool:
        return self == BASELINE

    @property
    def key(self) -> str:
        return f"{self.train}-{self.val}-{self.ratio:g}"

    @property
    def splits_fakes(self) -> bool:
        return "F" in self.train and "F" in self.val


BASELINE = CombinationSpec("R", "R", 0.0)


def all_cells(ratios: Sequence[float] = RATIOS) -> list[CombinationSpec]:
    return [BASELINE] + [CombinationSpec(tr, va, float(r)) for tr, va in PAIRS for r in ratios]


# --------------------------------------------------------------------------
# set construction
# --------------------------------------------------------------------------

def _class_counts(trips: Sequence[Trip]) -> dict[str, int]:
    counts = {c: 0 for c in CLASSES}
    for t in trips:
        if t.label not in counts:
            raise ContractError(f"trip {t.trip_id!r} has no class label")
        counts[t.label] += 1
    return counts


def stratified_halves(trips: Sequence[Trip], rng: np.random.Generator) -> tuple[list[Trip], list[Trip]]:
    """Split each class in half at random. With odd class sizes the first
    class gives its extra trip to the first half and the second class to the
    second half, keeping the halves equal in size."""
    first, second = [], []
    for ci, cls in enumerate(CLASSES):
        members = [t for t in trips if t.label == cls]
        order = rng.permutation(len(members))
        cut = len(members) // 2 + (len(members) % 2 if ci % 2 == 0 else 0)
        first += [members[i] for i in order[:cut]]
        second += [members[i] for i in order[cut:]]
    return first, second


def build_sets(R: Sequence[Trip], F: Sequence[Trip], spec: CombinationSpec,
               rng: np.random.Generator) -> tuple[list[Trip], list[Trip]]:
    """Training and validation trips for one cell.

    The rng is consumed in a fixed order (R split first, then F split), so
    calling this with identically seeded generators reproduces the same halves
    in every cell of a run.
    """
    counts = _class_counts(R)
    if len(set(counts.values())) != 1 or not R:
        raise ContractError(f"R must be non-empty and balanced, got {counts}")
    expected = spec.ratio * len(R)
    uses_fakes = "F" in spec.train or "F" in spec.val
    if uses_fakes:
        fcounts = _class_counts(F)
        if len(F) != round(expected) or len(set(fcounts.values())) != 1:
            raise ContractError(f"F must hold {expected:g} balanced trips for ratio {spec.ratio}, "
                                f"got {fcounts}")
    R_tr, R_val = stratified_halves(R, rng)
    if spec.splits_fakes:
        F_tr, F_val = stratified_halves(F, rng)
    else:
        F_tr = F_val = list(F) if uses_fakes else []

    def side(source: str, real: list[Trip], fake: list[Trip]) -> list[Trip]:
        return {"R": real, "F": fake, "RF": real + fake}[source]

    return side(spec.train, R_tr, F_tr), side(spec.val, R_val, F_val)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    runs: int = 20
    seed: int = 0
    n_trips: int = 238
    labeled: int = 60
    dataset_seed: int | None = None
    raw_csv: str | None = None
    truth_csv: str | None = None
    profiles: dict | None = None
    ratios: tuple[float, ...] = RATIOS
    rcgan: RcganConfig = field(default_factory=RcganConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    ae_epochs: int = 100
    ae_lr: float = 0.01
    skip_gan: bool = False
    write_roc: bool = True

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ContractError(f"unknown experiment config keys {sorted(unknown)}")
        if "rcgan" in obj:
            obj["rcgan"] = RcganConfig.from_dict(obj["rcgan"])
        if "grid" in obj:
            obj["grid"] = GridSpec.from_dict(obj["grid"])
        if "ratios" in obj:
            obj["ratios"] = tuple(float(r) for r in obj["ratios"])
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ratios"] = list(self.ratios)
        out["grid"] = {k: list(v) for k, v in asdict(self.grid).items()}
        return out

    def validate(self) -> None:
        if self.runs < 1:
            raise ContractError("runs must be >= 1")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ContractError("ratios must be positive")
        self.rcgan.validate()


def apply_overrides(obj: dict, overrides: Sequence[str]) -> dict:
    """``key=value`` or ``section.key=value`` pairs; values parse as JSON when possible."""
    obj = json.loads(json.dumps(obj))
    for item in overrides:
        if "=" not in item:
            raise ContractError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = obj
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return obj


# --------------------------------------------------------------------------
# data preparation
# --------------------------------------------------------------------------

@dataclass
class PreparedData:
    trips: list[Trip]            # all real trips, scaled to the labeled set's range
    labeled: list[int]           # indices of R
    unlabeled: list[int]         # indices used to pretrain the AE
    features: np.ndarray         # unscaled features of every real trip

    @property
    def truth(self) -> np.ndarray:
        return np.array([t.true_class for t in self.trips])


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load or simulate the real trips and run the signal pipeline on them."""
    if config.raw_csv:
        raws = read_raw_csv(config.raw_csv)
        if config.truth_csv:
            attach_truth(raws, read_truth_csv(config.truth_csv))
        source = raws
    else:
        seed = config.seed if config.dataset_seed is None else config.dataset_seed
        plans = simulate_dataset(config.n_trips, config.labeled, np.random.default_rng(seed))
        profiles = profiles_from_dict(config.profiles or {})
        source = (plan.realize(profiles) for plan in plans)
    trips, _ = preprocess_pipeline(source, fit_on=lambda t: t.label is not None)
    missing = [t.trip_id for t in trips if t.true_class is None]
    if missing:
        raise ContractError(f"{len(missing)} trips lack a ground-truth class (first: {missing[0]})")
    labeled = [i for i, t in enumerate(trips) if t.label is not None]
    unlabeled = [i for i, t in enumerate(trips) if t.label is None]
    if not unlabeled:
        raise ContractError("no unlabeled trips to pretrain the autoencoder on")
    return PreparedData(trips, labeled, unlabeled, feature_matrix(trips))


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------

@dataclass
class CellResult:
    spec: CombinationSpec
    auroc: float
    lr: float
    epochs: int
    activation: str
    val_auroc: float
    train_auroc: float


@dataclass
class RunResult:
    run: int
    seed: int
    cells: list[CellResult]
    rocs: dict = field(default_factory=dict, compare=False, repr=False)
    gan_history: LossHistory | None = field(default=None, compare=False, repr=False)

    def cell(self, spec: CombinationSpec) -> CellResult:
        for c in self.cells:
            if c.spec == spec:
                return c
        raise KeyError(spec.key)

    @property
    def baseline(self) -> float:
        return self.cell(BASELINE).auroc


def run_seed(base_seed: int, run: int) -> int:
    return int(np.random.SeedSequence([base_seed, run]).generate_state(1, np.uint64)[0] >> 1)


def run_experiment(config: ExperimentConfig, seed: int, data: PreparedData | None = None,
                   run: int = 0) -> RunResult:
    """One full pass over every cell. Deterministic in (config, seed)."""
    if data is None:
        data = prepare_data(config)
    gan_ss, synth_ss, ae_ss, split_ss, grid_ss = np.random.SeedSequence(seed).spawn(5)
    R = [data.trips[i] for i in data.labeled]

    fakes: dict[float, list[Trip]] = {}
    history = None
    cells = [BASELINE] if config.skip_gan else all_cells(config.ratios)
    if not config.skip_gan:
        gan_cfg = replace(config.rcgan, seed=seed)
        gen, _, history = train_rcgan(R, gan_cfg, np.random.default_rng(gan_ss))
        synth_rng = np.random.default_rng(synth_ss)
        for ratio in config.ratios:
            fakes[ratio] = synthesize(gen, ratio, len(R), synth_rng, seq_len=gan_cfg.seq_len,
                                      id_prefix=f"fake{ratio:g}_")

    scaler = fit_minmax(data.features[data.unlabeled])
    real_X = apply_minmax(scaler, data.features)
    feats = {t.trip_id: real_X[i] for i, t in enumerate(data.trips)}
    for ratio, fk in fakes.items():
        fake_X = apply_minmax(scaler, feature_matrix(fk))
        feats.update((t.trip_id, fake_X[k]) for k, t in enumerate(fk))

    ae, _ = train_autoencoder(real_X[data.unlabeled], config.ae_epochs, config.ae_lr,
                              np.random.default_rng(ae_ss))
    split_seed = int(np.random.default_rng(split_ss).integers(2**63))
    grid_seqs = grid_ss.spawn(len(cells))
    test_y = data.truth

    results, rocs = [], {}
    for idx, spec in enumerate(cells):
        train, val = build_sets(R, fakes.get(spec.ratio, []), spec,
                                np.random.default_rng(split_seed))
        tr_X = np.stack([feats[t.trip_id] for t in train])
        va_X = np.stack([feats[t.trip_id] for t in val])
        tr_y = [t.label for t in train]
        va_y = [t.label for t in val]
        try:
            found = grid_search(ae, tr_X, tr_y, va_X, va_y, config.grid,
                                np.random.default_rng(grid_seqs[idx]))
        except ContractError as exc:
            raise ContractError(f"cell {spec.key}: {exc}") from exc
        test_auc, test_roc = auroc(predict(found.model, real_X), test_y)
        train_auc, train_roc = auroc(predict(found.model, tr_X), tr_y)
        val_auc, val_roc = auroc(predict(found.model, va_X), va_y)
        lr, epochs, act = found.config
        results.append(CellResult(spec, test_auc, lr, epochs, act, val_auc, train_auc))
        rocs[spec.key] = {"train": train_roc, "val": val_roc, "test": test_roc}
        log.info("run %d cell %s test AUROC %.4f", run, spec.key, test_auc)
    return RunResult(run, seed, results, rocs, history)


def _run_worker(args):
    config, seed, data, run = args
    return run_experiment(config, seed, data, run)


def run_experiments(config: ExperimentConfig, jobs: int = 1,
                    data: PreparedData | None = None) -> list[RunResult]:
    """All runs, each with a seed derived from (config.seed, run index)."""
    config.validate()
    if data is None:
        data = prepare_data(config)
    tasks = [(config, run_seed(config.seed, k), data, k) for k in range(config.runs)]
    if jobs <= 1:
        return [_run_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_worker, tasks))


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

@dataclass
class CellAggregate:
    spec: CombinationSpec
    count: int
    mean: float | None
    sd: float | None


@dataclass
class AggregateReport:
    n_runs: int
    cells: list[CellAggregate]
    n_improved: int

    @property
    def fraction(self) -> float:
        return self.n_improved / self.n_runs if self.n_runs else 0.0

    def pair_summary(self, train: str, val: str, results: Sequence[RunResult] | None = None):
        """Counts per ratio plus mean/SD pooled over the pair's above-baseline cells.

        Pooling needs the raw AUROCs; without ``results`` the per-cell means are
        combined by count, and the pooled SD is left out.
        """
        cells = [c for c in self.cells if c.spec.train == train and c.spec.val == val]
        counts = {c.spec.ratio: c.count for c in cells}
        if results is not None:
            vals = [r.cell(c.spec).auroc for r in results for c in cells
                    if r.cell(c.spec).auroc > r.baseline]
            return counts, *_mean_sd(vals)
        total = sum(c.count for c in cells)
        if total == 0:
            return counts, None, None
        return counts, sum(c.mean * c.count for c in cells if c.count) / total, None


def _mean_sd(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else None
    return float(arr.mean()), sd


def aggregate(results: Sequence[RunResult]) -> AggregateReport:
    """Per cell: runs strictly above their own baseline, and mean/SD of those AUROCs."""
    if not results:
        raise ContractError("nothing to aggregate")
    specs = [c.spec for c in results[0].cells if not c.spec.is_baseline]
    cells = []
    for spec in specs:
        above = [r.cell(spec).auroc for r in results if r.cell(spec).auroc > r.baseline]
        mean, sd = _mean_sd(above)
        cells.append(CellAggregate(spec, len(above), mean, sd))
    improved = sum(any(c.auroc > r.baseline for c in r.cells if not c.spec.is_baseline)
                   for r in results)
    return AggregateReport(len(results), cells, improved)


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------

RUN_COLUMNS = ["train", "val", "ratio", "auroc", "above_baseline", "lr", "epochs",
               "activation", "val_auroc", "train_auroc"]
AGG_COLUMNS = ["row", "train", "val", "ratio", "count", "mean", "sd", "runs", "fraction"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return fmt_float(x)
    return str(x)


def _opt_float(s: str) -> float | None:
    return None if s == "" else float(s)


def _csv_rows(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header comments parsed as ``key=value`` pairs, plus the data rows."""
    meta: dict[str, str] = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        else:
            body.append(line)
    return meta, list(csv.DictReader(io.StringIO("\n".join(body))))


def provenance(seed: int | None, extra: str | None = None) -> list[str]:
    lines = [f"imuaug version={__version__} seed={seed}"]
    if extra:
        lines.append(extra)
    return lines


def write_run_csv(path: str | Path, result: RunResult) -> None:
    base = result.baseline
    with Path(path).open("w", newline="") as fh:
        fh.write(_comment_lines(provenance(result.seed, f"run={result.run}")
                                + [f"note: {PROTOCOL_NOTE}"]))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_COLUMNS)
        for c in result.cells:
            writer.writerow([c.spec.train, c.spec.val, _fmt(c.spec.ratio), _fmt(c.auroc),
                             int(c.auroc > base and not c.spec.is_baseline), _fmt(c.lr),
                             c.epochs, c.activation, _fmt(c.val_auroc), _fmt(c.train_auroc)])


def read_run_csv(path: str | Path) -> RunResult:
    meta, rows = _csv_rows(path)
    try:
        cells = [CellResult(CombinationSpec(r["train"], r["val"], float(r["ratio"])),
                            float(r["auroc"]), float(r["lr"]), int(r["epochs"]),
                            r["activation"], float(r["val_auroc"]), float(r["train_auroc"]))
                 for r in rows]
        return RunResult(int(meta["run"]), int(meta["seed"]), cells)
    except (KeyError, ValueError) as exc:
        raise ContractError(f"{path}: malformed run report ({exc})") from exc


def _pct(ratio: float) -> str:
    return f"{ratio * 100:g}%"


def write_run_markdown(path: str | Path, result: RunResult) -> None:
    base = result.baseline
    lines = [f"<!-- {' '.join(provenance(result.seed, f'run={result.run}'))} -->",
             f"Run {result.run} (seed {result.seed}). Note: {PROTOCOL_NOTE}.", "",
             "| Training Set | Validation Set | Ratio Fake/Real | AUROC | Config |",
             "|---|---|---|---|---|"]
    for c in result.cells:
        val = f"{c.auroc:.3f}"
        if c.auroc > base and not c.spec.is_baseline:
            val = f"**{val}**"
        lines.append(f"| {_name(c.spec.train)} | {_name(c.spec.val)} | {_pct(c.spec.ratio)} | "
                     f"{val} | lr={c.lr:g}, epochs={c.epochs}, {c.activation} |")
    Path(path).write_text("\n".join(lines) + "\n")


def _name(source: str) -> str:
    return "R + F" if source == "RF" else source


def write_aggregate_csv(path: str | Path, report: AggregateReport, seed: int | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(_comment_lines(provenance(seed)))
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGG_COLUMNS)
        for c in report.cells:
            writer.writerow(["cell", c.spec.train, c.spec.val, _fmt(c.spec.ratio), c.count,
                             _fmt(c.mean), _fmt(c.sd), "", ""])
        writer.writerow(["overall", "", "", "", report.n_improved, "", "", report.n_runs,
                         _fmt(report.fraction)])


def read_aggregate_csv(path: str | Path) -> AggregateReport:
    _, rows = _csv_rows(path)
    cells, overall = [], None
    try:
        for r in rows:
            if r["row"] == "cell":
                cells.append(CellAggregate(CombinationSpec(r["train"], r["val"], float(r["ratio"])),
                                           int(r["count"]), _opt_float(r["mean"]),
                                           _opt_float(r["sd"])))
            elif r["row"] == "overall":
                overall = (int(r["runs"]), int(r["count"]))
    except (KeyError, ValueError) as exc:
        raise ContractError(f"{path}: malformed aggregate report ({exc})") from exc
    if overall is None:
        raise ContractError(f"{path}: missing overall row")
    return AggregateReport(overall[0], cells, overall[1])


def write_aggregate_markdown(path: str | Path, report: AggregateReport,
                             results: Sequence[RunResult] | None = None,
                             seed: int | None = None) -> None:
    ratios = sorted({c.spec.ratio for c in report.cells})
    head = "| Training | Validation | " + " | ".join(_pct(r) for r in ratios) + " | Mean | SD |"
    lines = [f"<!-- {' '.join(provenance(seed))} -->",
             f"Runs outperforming the baseline, out of {report.n_runs}. Note: {PROTOCOL_NOTE}.",
             "", head, "|" + "---|" * (len(ratios) + 4)]
    pairs = [p for p in PAIRS if any((c.spec.train, c.spec.val) == p for c in report.cells)]
    for tr, va in pairs:
        counts, mean, sd = report.pair_summary(tr, va, results)
        cols = " | ".join(str(counts.get(r, 0)) for r in ratios)
        lines.append(f"| {_name(tr)} | {_name(va)} | {cols} | "
                     f"{'--' if mean is None else f'{mean:.3f}'} | "
                     f"{'--' if sd is None else f'{sd:.3f}'} |")
    lines += ["", f"In {100 * report.fraction:.0f}% of the runs ({report.n_improved}/{report.n_runs}) "
              "at least one combination scored strictly above that run's baseline."]
    Path(path).write_text("\n".join(lines) + "\n")


def emit_report(results: Sequence[RunResult], out_dir: str | Path,
                formats: Sequence[str] = ("csv", "markdown"), seed: int | None = None,
                write_roc: bool = True) -> AggregateReport:
    """Per-run cell tables, the cross-run aggregate, and ROC/loss CSVs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ContractError(f"cannot create output directory {out}: {exc}") from exc
    for fmt in formats:
        if fmt not in ("csv", "markdown"):
            raise ContractError(f"unknown report format {fmt!r}")
    report = aggregate(results)
    for r in results:
        if "csv" in formats:
            write_run_csv(out / f"run_{r.run}.csv", r)
        if "markdown" in formats:
            write_run_markdown(out / f"run_{r.run}.md", r)
        if write_roc and r.rocs:
            roc_dir = out / "roc" / f"run_{r.run}"
            roc_dir.mkdir(parents=True, exist_ok=True)
            for key, curves in r.rocs.items():
                for which, curve in curves.items():
                    curve.to_csv(roc_dir / f"{key}_{which}.csv", provenance(r.seed))
        if r.gan_history is not None:
            r.gan_history.to_csv(out / f"run_{r.run}_gan_loss.csv", provenance(r.seed))
    if "csv" in formats:
        write_aggregate_csv(out / "aggregate.csv", report, seed)
    if "markdown" in formats:
        write_aggregate_markdown(out / "aggregate.md", report, results, seed)
    return report
