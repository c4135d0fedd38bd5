"""Autoencoder pretraining, weight transfer, grid-searched fine-tuning, AUROC.

Layer layout (weights are (out, in))::

    autoencoder  45 -> 100 -> 50 -> 100 -> 45   tanh hidden, linear output
    classifier   45 -> 100 -> 50 -> 100 -> 2    hidden layers copied from the AE

The classifier's three hidden layers are the AE's first three layers, so
after a transfer the second hidden activation equals the AE code exactly
(tanh). For ``maxout`` the copied weights are kept and each consecutive unit
pair is replaced by its maximum, written back into both slots; the effective
widths become [50, 25, 50] while the parameter shapes stay the same.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import (AdamState, ContractError, NonFiniteError, ParamVector, activation_grad,
                       adam_update, fmt_float, maxout, softmax, uniform_init)
from .preprocess import _comment_lines

AE_DIMS = (45, 100, 50, 100, 45)
HIDDEN_ACTIVATIONS = ("tanh", "maxout", "rectifier")
POSITIVE = "aggressive"
INIT_SCALE = 0.08
AE_LEARNING_RATE = 0.01


def _layout(dims: Sequence[int]) -> tuple:
    out = []
    for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        out += [(f"W{k}", (d_out, d_in)), (f"b{k}", (d_out,))]
    return tuple(out)


def _hidden(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "rectifier":
        return np.maximum(z, 0.0)
    if kind == "maxout":
        return np.repeat(maxout(z), 2, axis=-1)
    raise ContractError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}, got {kind!r}")


def _hidden_grad(kind: str, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if kind == "maxout":
        # both slots of a pair carry the pair max, so their gradients add
        return activation_grad("maxout", z, upstream[..., 0::2] + upstream[..., 1::2])
    return activation_grad(kind, z, upstream)


def _mlp_forward(p: ParamVector, n_layers: int, kind: str, X: np.ndarray):
    """Hidden layers use ``kind``; the last layer is linear. Returns (output, pre-acts, acts)."""
    acts = [X]
    pres = []
    a = X
    for k in range(1, n_layers + 1):
        z = a @ p[f"W{k}"].T + p[f"b{k}"]
        pres.append(z)
        a = z if k == n_layers else _hidden(kind, z)
        acts.append(a)
    return a, pres, acts


def _mlp_backward(p: ParamVector, n_layers: int, kind: str, pres, acts,
                  d_out: np.ndarray) -> ParamVector:
    grads = {}
    delta = d_out
    for k in range(n_layers, 0, -1):
        grads[f"W{k}"] = delta.T @ acts[k - 1]
        grads[f"b{k}"] = delta.sum(axis=0)
        if k > 1:
            delta = _hidden_grad(kind, pres[k - 2], delta @ p[f"W{k}"])
    return ParamVector.from_dict(grads, p.layout)


# --------------------------------------------------------------------------
# autoencoder
# --------------------------------------------------------------------------

@dataclass
class Autoencoder:
    params: ParamVector
    dims: tuple[int, ...] = AE_DIMS

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Sequence[int] = AE_DIMS) -> "Autoencoder":
        dims = tuple(dims)
        if len(dims) != 5 or dims[0] != dims[-1]:
            raise ContractError(f"autoencoder dims must look like (d, h1, h2, h3, d), got {dims}")
        return cls(uniform_init(rng, _layout(dims), INIT_SCALE), dims)

    def encode(self, S: np.ndarray) -> np.ndarray:
        """Bottleneck code (second hidden layer)."""
        a = np.asarray(S, dtype=np.float64)
        for k in (1, 2):
            a = np.tanh(a @ self.params[f"W{k}"].T + self.params[f"b{k}"])
        return a

    def reconstruct(self, S: np.ndarray) -> np.ndarray:
        return _mlp_forward(self.params, self.n_layers, "tanh", np.asarray(S, dtype=np.float64))[0]


def ae_loss_grad(ae: Autoencoder, S: np.ndarray) -> tuple[float, ParamVector]:
    """Mean over samples of the squared L2 reconstruction error, and its gradient."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    out, pres, acts = _mlp_forward(ae.params, ae.n_layers, "tanh", S)
    diff = out - S
    loss = float(np.sum(diff * diff) / n)
    grad = _mlp_backward(ae.params, ae.n_layers, "tanh", pres, acts, 2.0 * diff / n)
    return loss, grad


def train_autoencoder(S: np.ndarray, epochs: int = 100, lr: float = AE_LEARNING_RATE,
                      rng: np.random.Generator | None = None, dims: Sequence[int] | None = None,
                      init: Autoencoder | None = None) -> tuple[Autoencoder, list[float]]:
    """Full-batch ADAM on the reconstruction error. History holds the loss before each step."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ContractError("the autoencoder needs a non-empty (n, d) feature matrix")
    if init is None:
        if rng is None:
            raise ContractError("pass either an rng or an initial autoencoder")
        init = Autoencoder.init(rng, dims or (S.shape[1],) + AE_DIMS[1:4] + (S.shape[1],))
    if S.shape[1] != init.dims[0]:
        raise ContractError(f"feature width {S.shape[1]} != autoencoder input {init.dims[0]}")
    params = init.params
    state = AdamState.fresh(len(params))
    history = []
    for epoch in range(epochs):
        loss, grad = ae_loss_grad(Autoencoder(params, init.dims), S)
        if not np.isfinite(loss):
            raise NonFiniteError(f"autoencoder loss non-finite at epoch {epoch}")
        history.append(loss)
        params, state = adam_update(params, grad, state, lr)
    return Autoencoder(params, init.dims), history


# --------------------------------------------------------------------------
# classifier
# --------------------------------------------------------------------------

@dataclass
class Classifier:
    params: ParamVector
    activation: str
    dims: tuple[int, ...]

    N_LAYERS = 4

    def hidden_activations(self, S: np.ndarray) -> list[np.ndarray]:
        _, _, acts = _mlp_forward(self.params, self.N_LAYERS, self.activation,
                                  np.asarray(S, dtype=np.float64))
        return acts[1:-1]

    def to_json(self) -> dict:
        return {"activation": self.activation, "dims": list(self.dims),
                "params": self.params.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "Classifier":
        return cls(ParamVector.from_json(obj["params"]), obj["activation"], tuple(obj["dims"]))


def transfer_weights(ae: Autoencoder, activation: str, rng: np.random.Generator,
                     n_classes: int = 2) -> Classifier:
    """Copy the AE's three hidden layers and add a fresh uniform output layer."""
    if activation not in HIDDEN_ACTIVATIONS:
        raise ContractError(f"activation must be one of {HIDDEN_ACTIVATIONS}, got {activation!r}")
    dims = ae.dims[:4] + (n_classes,)
    if activation == "maxout" and any(d % 2 for d in dims[1:4]):
        raise ContractError(f"maxout needs even hidden widths, got {dims[1:4]}")
    arrays = {}
    for k in (1, 2, 3):
        W, b = ae.params[f"W{k}"], ae.params[f"b{k}"]
        if W.shape != (dims[k], dims[k - 1]):
            raise ContractError(f"AE layer {k} has shape {W.shape}, expected {(dims[k], dims[k - 1])}")
        arrays[f"W{k}"] = W.copy()
        arrays[f"b{k}"] = b.copy()
    arrays["W4"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_classes, dims[3]))
    arrays["b4"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_classes,))
    return Classifier(ParamVector.from_dict(arrays, _layout(dims)), activation, dims)


def _targets(labels, n_classes: int = 2) -> np.ndarray:
    y = encode_labels(labels)
    return np.eye(n_classes)[y]


def encode_labels(labels) -> np.ndarray:
    """Map labels to ints (1 = aggressive). Accepts class names, bools or 0/1."""
    arr = np.asarray(labels)
    if arr.dtype.kind in "USO":
        if not np.all(np.isin(arr, ["normal", POSITIVE])):
            raise ContractError(f"labels must be 'normal' or {POSITIVE!r}")
        return (arr == POSITIVE).astype(int)
    arr = arr.astype(int)
    if not np.all((arr == 0) | (arr == 1)):
        raise ContractError("numeric labels must be 0 or 1")
    return arr


def classifier_loss_grad(model: Classifier, S: np.ndarray, labels) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy and its gradient."""
    S = np.asarray(S, dtype=np.float64)
    T = _targets(labels, model.dims[-1])
    logits, pres, acts = _mlp_forward(model.params, model.N_LAYERS, model.activation, S)
    P = softmax(logits)
    n = S.shape[0]
    loss = float(-np.sum(T * np.log(np.clip(P, 1e-300, None))) / n)
    grad = _mlp_backward(model.params, model.N_LAYERS, model.activation, pres, acts, (P - T) / n)
    return loss, grad


def train_classifier(init: Classifier, S: np.ndarray, labels, epochs: int, lr: float,
                     snapshots: Sequence[int] = ()) -> Classifier | dict[int, Classifier]:
    """Full-batch ADAM on cross-entropy.

    With ``snapshots`` the models after each listed epoch count are returned
    in a dict instead; this is bitwise the same as separate runs of that
    length because the optimizer is deterministic.
    """
    y = encode_labels(labels)
    if len(np.unique(y)) < 2:
        raise ContractError("the classifier's training set must contain both classes")
    S = np.asarray(S, dtype=np.float64)
    if S.shape[1] != init.dims[0]:
        raise ContractError(f"feature width {S.shape[1]} != classifier input {init.dims[0]}")
    wanted = set(snapshots)
    total = max([epochs, *wanted])
    params = init.params
    state = AdamState.fresh(len(params))
    saved = {}
    if 0 in wanted:
        saved[0] = init
    for epoch in range(1, total + 1):
        loss, grad = classifier_loss_grad(Classifier(params, init.activation, init.dims), S, y)
        if not np.isfinite(loss):
            raise NonFiniteError(f"classifier loss non-finite at epoch {epoch - 1}")
        params, state = adam_update(params, grad, state, lr)
        if epoch in wanted:
            saved[epoch] = Classifier(params, init.activation, init.dims)
    if snapshots:
        return saved
    return Classifier(params, init.activation, init.dims)


def predict(model: Classifier, S: np.ndarray) -> np.ndarray | float:
    """Probability of the aggressive class for one feature vector or a batch."""
    S = np.asarray(S, dtype=np.float64)
    if S.shape[-1] != model.dims[0]:
        raise ContractError(f"feature width {S.shape[-1]} != classifier input {model.dims[0]}")
    logits, _, _ = _mlp_forward(model.params, model.N_LAYERS, model.activation, np.atleast_2d(S))
    p = softmax(logits)[:, 1]
    return float(p[0]) if S.ndim == 1 else p


# --------------------------------------------------------------------------
# grid search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    learning_rates: tuple[float, ...] = (0.001, 0.01, 0.1)
    epochs: tuple[int, ...] = (100, 200, 500)
    activations: tuple[str, ...] = HIDDEN_ACTIVATIONS

    def configs(self) -> list[tuple[float, int, str]]:
        """All configs in tie-break order: lr, then epochs, then activation list order."""
        return list(itertools.product(sorted(self.learning_rates), sorted(self.epochs),
                                      self.activations))

    @classmethod
    def from_dict(cls, obj: dict) -> "GridSpec":
        return cls(tuple(float(v) for v in obj.get("learning_rates", cls.learning_rates)),
                   tuple(int(v) for v in obj.get("epochs", cls.epochs)),
                   tuple(obj.get("activations", cls.activations)))


@dataclass
class GridResult:
    model: Classifier
    config: tuple[float, int, str]
    table: list[tuple[tuple[float, int, str], float]] = field(default_factory=list)

    @property
    def val_auroc(self) -> float:
        return dict(self.table)[self.config]


def grid_search(ae: Autoencoder, train_X: np.ndarray, train_y, val_X: np.ndarray, val_y,
                grid: GridSpec, rng: np.random.Generator) -> GridResult:
    """Fine-tune every grid config from the same transferred start; keep the best.

    One output-layer initialization is drawn per call and shared by all
    configs, so configs differing only in epoch count lie on one training
    trajectory and are read off as snapshots.
    """
    if len(train_X) == 0 or len(val_X) == 0:
        raise ContractError("grid search needs non-empty training and validation sets")
    out_seed = int(rng.integers(2**63))
    epochs = sorted(grid.epochs)
    trained: dict[tuple[float, int, str], Classifier] = {}
    for lr in sorted(grid.learning_rates):
        for kind in grid.activations:
            init = transfer_weights(ae, kind, np.random.default_rng(out_seed))
            snaps = train_classifier(init, train_X, train_y, max(epochs), lr, snapshots=epochs)
            for e in epochs:
                trained[(lr, e, kind)] = snaps[e]
    table = []
    best = None
    for cfg in grid.configs():
        score = auroc(predict(trained[cfg], val_X), val_y)[0]
        table.append((cfg, score))
        if best is None or score > best[1]:
            best = (cfg, score)
    return GridResult(trained[best[0]], best[0], table)


# --------------------------------------------------------------------------
# AUROC
# --------------------------------------------------------------------------

@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path: str | Path, comment: Sequence[str] | str | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(_comment_lines(comment))
            fh.write("threshold,fpr,tpr\n")
            for th, f, t in zip(self.thresholds, self.fpr, self.tpr):
                fh.write(f"{fmt_float(th)},{fmt_float(f)},{fmt_float(t)}\n")


def auroc(scores, labels) -> tuple[float, RocCurve]:
    """Mann-Whitney AUROC (ties count one half) and the empirical ROC curve.

    The curve starts at (0, 0) with threshold +inf and adds one point per
    distinct score, predicting positive when score >= threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = encode_labels(labels).ravel()
    if s.shape != y.shape:
        raise ContractError("scores and labels differ in length")
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    if pos.size == 0 or neg.size == 0:
        raise ContractError("AUROC needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    wins = 2 * int(below.sum()) + int(ties.sum())       # in half-units, exact
    auc = wins / (2.0 * pos.size * neg.size)

    thresholds = np.unique(s)[::-1]
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    curve = RocCurve(np.concatenate([[np.inf], thresholds]),
                     np.concatenate([[0.0], fp / neg.size]),
                     np.concatenate([[0.0], tp / pos.size]), auc)
    return auc, curve


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_model(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj) + "\n")


def load_model(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: malformed JSON at line {exc.lineno}") from exc
