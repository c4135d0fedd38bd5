"""Recurrent conditional GAN over 60x5 trips.

Both networks are peephole LSTMs that receive the one-hot driving style at
every time step. The generator maps (noise_t, y) to a sigmoid output in
(0, 1)^5; the discriminator maps (x_t, y) to a per-step real/fake score and
its losses are averaged over the sequence.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import (AdamState, ContractError, NonFiniteError, ParamVector, adam_update,
                       fmt_float, sgd_update, sigmoid, uniform_init)
from .preprocess import CLASSES, Trip, _comment_lines
from .rnn import INIT_SCALE, LstmCache, lstm_backward, lstm_forward, lstm_layout, lstm_view

log = logging.getLogger(__name__)

N_CLASSES = len(CLASSES)
CLAMP = 1e-12
LOSS_FORMS = ("non_saturating", "minimax")


@dataclass
class RcganConfig:
    """Training hyper-parameters with their default values."""

    learning_rate: float = 0.001      # generator (ADAM)
    d_learning_rate: float = 0.001    # discriminator (plain gradient descent)
    batch_size: int = 1
    epochs: int = 5000
    g_rounds: int = 1
    d_rounds: int = 1
    hidden: int = 100
    latent: int = 25
    smooth: float = 0.1
    seq_len: int = 60
    channels: int = 5
    loss_form: str = "non_saturating"
    seed: int = 0

    def validate(self) -> None:
        for name in ("learning_rate", "d_learning_rate", "hidden", "latent", "seq_len",
                     "channels", "g_rounds", "d_rounds"):
            if getattr(self, name) <= 0:
                raise ContractError(f"RcganConfig.{name} must be positive")
        if self.epochs < 0:
            raise ContractError("RcganConfig.epochs must be >= 0")
        if self.batch_size != 1:
            raise ContractError("only batch_size = 1 is supported")
        if not 0.0 <= self.smooth < 0.5:
            raise ContractError("smooth must lie in [0, 0.5)")
        if self.loss_form not in LOSS_FORMS:
            raise ContractError(f"loss_form must be one of {LOSS_FORMS}")

    @classmethod
    def from_dict(cls, obj: dict) -> "RcganConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ContractError(f"unknown RCGAN config keys {sorted(unknown)}")
        return cls(**obj)


def condition(label: str) -> np.ndarray:
    """One-hot encoding of a driving style (index order: normal, aggressive)."""
    if label not in CLASSES:
        raise ContractError(f"condition must be one of {CLASSES}, got {label!r}")
    y = np.zeros(N_CLASSES)
    y[CLASSES.index(label)] = 1.0
    return y


def sample_noise(rng: np.random.Generator, L: int, m: int) -> np.ndarray:
    if L <= 0 or m <= 0:
        raise ContractError("noise dimensions must be positive")
    return rng.standard_normal((L, m))


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

@dataclass
class GeneratorNet:
    params: ParamVector
    latent: int
    hidden: int
    channels: int

    @classmethod
    def layout(cls, latent: int, hidden: int, channels: int) -> tuple:
        return lstm_layout(latent + N_CLASSES, hidden) + (
            ("W_out", (channels, hidden)), ("b_out", (channels,)))

    @classmethod
    def init(cls, rng: np.random.Generator, latent: int, hidden: int, channels: int) -> "GeneratorNet":
        pv = uniform_init(rng, cls.layout(latent, hidden, channels), INIT_SCALE)
        return cls(pv, latent, hidden, channels)

    def with_params(self, params: ParamVector) -> "GeneratorNet":
        return GeneratorNet(params, self.latent, self.hidden, self.channels)


@dataclass
class DiscriminatorNet:
    params: ParamVector
    hidden: int
    channels: int

    @classmethod
    def layout(cls, hidden: int, channels: int) -> tuple:
        return lstm_layout(channels + N_CLASSES, hidden) + (
            ("W_out", (1, hidden)), ("b_out", (1,)))

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, channels: int) -> "DiscriminatorNet":
        pv = uniform_init(rng, cls.layout(hidden, channels), INIT_SCALE)
        return cls(pv, hidden, channels)

    def with_params(self, params: ParamVector) -> "DiscriminatorNet":
        return DiscriminatorNet(params, self.hidden, self.channels)


def _with_condition(seq: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(B, L, d) + (B, 2) -> (B, L, d + 2) with y repeated at every step."""
    B, L, _ = seq.shape
    return np.concatenate([seq, np.broadcast_to(y[:, None, :], (B, L, y.shape[-1]))], axis=2)


def _batch(arr: np.ndarray, ndim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    return arr[None] if arr.ndim == ndim - 1 else arr


def _gen_forward(gen: GeneratorNet, Z: np.ndarray, Y: np.ndarray):
    if Z.shape[-1] != gen.latent:
        raise ContractError(f"noise width {Z.shape[-1]} != latent size {gen.latent}")
    p = gen.params
    cache = lstm_forward(lstm_view(p), _with_condition(Z, Y))
    out = sigmoid(cache.H @ p["W_out"].T + p["b_out"])
    return out, cache


def _disc_forward(disc: DiscriminatorNet, X: np.ndarray, Y: np.ndarray):
    if X.shape[-1] != disc.channels:
        raise ContractError(f"trip width {X.shape[-1]} != {disc.channels} channels")
    if not np.all(np.isfinite(X)):
        raise ContractError("discriminator input must be finite")
    p = disc.params
    cache = lstm_forward(lstm_view(p), _with_condition(X, Y))
    logits = cache.H @ p["W_out"][0] + p["b_out"][0]
    return logits, cache


def generate_values(gen: GeneratorNet, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Raw generator output; accepts one (L, m) noise sequence or a batch."""
    single = np.ndim(z) == 2
    Z = _batch(z, 3)
    Y = np.broadcast_to(_batch(y, 2), (Z.shape[0], N_CLASSES))
    out, _ = _gen_forward(gen, Z, Y)
    return out[0] if single else out


def generate(gen: GeneratorNet, z: np.ndarray, label: str, trip_id: str = "") -> Trip:
    """One synthetic trip for the requested style."""
    if np.ndim(z) != 2:
        raise ContractError(f"noise must be (L, m), got shape {np.shape(z)}")
    return Trip(generate_values(gen, z, condition(label)), label, trip_id)


def discriminate(disc: DiscriminatorNet, trip: np.ndarray | Trip, label: str) -> tuple[np.ndarray, float]:
    """Per-step scores in (0, 1) and their mean."""
    values = trip.values if isinstance(trip, Trip) else trip
    X = _batch(values, 3)
    if X.shape[0] != 1 or X.ndim != 3:
        raise ContractError(f"expected one (L, k) trip, got {np.shape(values)}")
    logits, _ = _disc_forward(disc, X, condition(label)[None])
    scores = sigmoid(logits[0])
    return scores, float(scores.mean())


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def bce(p: np.ndarray, target: float) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log1p(-p))))


def gan_losses(d_real: np.ndarray, d_fake: np.ndarray, smooth: float = 0.1,
               loss_form: str = "non_saturating") -> tuple[float, float]:
    """(discriminator loss, generator loss) from per-step scores.

    The real target is ``1 - smooth``; the fake target is 0. The generator
    loss is -log D(G(z)) by default, or log(1 - D(G(z))) for ``"minimax"``.
    """
    d_loss = bce(d_real, 1.0 - smooth) + bce(d_fake, 0.0)
    if loss_form == "minimax":
        g_loss = -bce(d_fake, 0.0)
    elif loss_form == "non_saturating":
        g_loss = bce(d_fake, 1.0)
    else:
        raise ContractError(f"loss_form must be one of {LOSS_FORMS}")
    return d_loss, g_loss


def _head_backward(p: ParamVector, cache: LstmCache, dlogits: np.ndarray, need_dx: bool):
    """Gradient of a scalar head + LSTM, given dLoss/dlogit per (batch, step)."""
    w = p["W_out"][0]
    dH = dlogits[..., None] * w
    grads, dX = lstm_backward(lstm_view(p), cache, dH, need_dx=need_dx)
    dW_out = np.einsum("bl,blh->h", dlogits, cache.H)[None]
    db_out = np.array([dlogits.sum()])
    flat = np.concatenate([grads.W.ravel(), grads.U.ravel(), grads.V, grads.b,
                           dW_out.ravel(), db_out])
    return p.with_values(flat), dX


def discriminator_loss_grad(disc: DiscriminatorNet, x_real: np.ndarray, x_fake: np.ndarray,
                            y: np.ndarray, smooth: float) -> tuple[float, ParamVector]:
    """D loss on one real and one fake sequence (fake held fixed) and its gradient."""
    X = np.stack([x_real, x_fake])
    Y = np.stack([y, y])
    logits, cache = _disc_forward(disc, X, Y)
    s = sigmoid(logits)
    L = s.shape[1]
    loss = bce(s[0], 1.0 - smooth) + bce(s[1], 0.0)
    dlogits = np.empty_like(s)
    dlogits[0] = (s[0] - (1.0 - smooth)) / L
    dlogits[1] = s[1] / L
    grad, _ = _head_backward(disc.params, cache, dlogits, need_dx=False)
    return loss, grad


def generator_loss_grad(gen: GeneratorNet, disc: DiscriminatorNet, z: np.ndarray,
                        y: np.ndarray, loss_form: str = "non_saturating") -> tuple[float, ParamVector]:
    """G loss through the frozen discriminator, and its gradient w.r.t. G."""
    Y = y[None]
    out, gcache = _gen_forward(gen, z[None], Y)
    logits, dcache = _disc_forward(disc, out, Y)
    s = sigmoid(logits)
    L = s.shape[1]
    if loss_form == "non_saturating":
        loss = bce(s[0], 1.0)
        dlogits = (s - 1.0) / L
    elif loss_form == "minimax":
        loss = -bce(s[0], 0.0)
        dlogits = -s / L
    else:
        raise ContractError(f"loss_form must be one of {LOSS_FORMS}")
    _, dX = _head_backward(disc.params, dcache, dlogits, need_dx=True)
    d_out = dX[..., :gen.channels]
    d_act = d_out * out * (1.0 - out)
    p = gen.params
    dW_out = np.einsum("blk,blh->kh", d_act, gcache.H)
    db_out = d_act.sum(axis=(0, 1))
    grads, _ = lstm_backward(lstm_view(p), gcache, d_act @ p["W_out"])
    flat = np.concatenate([grads.W.ravel(), grads.U.ravel(), grads.V, grads.b,
                           dW_out.ravel(), db_out])
    return loss, p.with_values(flat)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass
class LossHistory:
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)

    def to_csv(self, path: str | Path, comment=None) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(_comment_lines(comment))
            fh.write("epoch,d_loss,g_loss\n")
            for e, (d, g) in enumerate(zip(self.d_loss, self.g_loss)):
                fh.write(f"{e},{fmt_float(d)},{fmt_float(g)}\n")


def _check_training_set(trips: Sequence[Trip], config: RcganConfig) -> None:
    if not trips:
        raise ContractError("cannot train the RCGAN on an empty dataset")
    counts = {c: 0 for c in CLASSES}
    for t in trips:
        if t.label not in counts:
            raise ContractError(f"trip {t.trip_id!r} has no class label")
        if np.shape(t.values) != (config.seq_len, config.channels):
            raise ContractError(f"trip {t.trip_id!r} has shape {np.shape(t.values)}, "
                                f"expected {(config.seq_len, config.channels)}")
        counts[t.label] += 1
    if len(set(counts.values())) != 1:
        raise ContractError(f"RCGAN training set must be class-balanced, got {counts}")


def train_rcgan(trips: Sequence[Trip], config: RcganConfig, rng: np.random.Generator,
                ) -> tuple[GeneratorNet, DiscriminatorNet, LossHistory]:
    """Alternate discriminator SGD and generator ADAM steps, one trip at a time.

    Each epoch visits the trips in a fresh random order; for every trip the
    discriminator takes ``d_rounds`` steps and then the generator takes
    ``g_rounds`` steps, each with new noise and the trip's own label as the
    condition. The history holds per-epoch means of the losses seen before
    each update.
    """
    config.validate()
    _check_training_set(trips, config)
    gen = GeneratorNet.init(rng, config.latent, config.hidden, config.channels)
    disc = DiscriminatorNet.init(rng, config.hidden, config.channels)
    adam = AdamState.fresh(len(gen.params))
    history = LossHistory()
    X = [np.asarray(t.values, dtype=np.float64) for t in trips]
    Ys = [condition(t.label) for t in trips]
    L, m = config.seq_len, config.latent

    for epoch in range(config.epochs):
        d_sum = g_sum = 0.0
        order = rng.permutation(len(trips))
        for item, j in enumerate(order):
            x, y = X[j], Ys[j]
            for _ in range(config.d_rounds):
                fake = generate_values(gen, sample_noise(rng, L, m), y)
                d_loss, d_grad = discriminator_loss_grad(disc, x, fake, y, config.smooth)
                if not np.isfinite(d_loss):
                    raise NonFiniteError(f"discriminator loss non-finite at epoch {epoch}, item {item}")
                disc = disc.with_params(sgd_update(disc.params, d_grad, config.d_learning_rate))
                d_sum += d_loss / config.d_rounds
            for _ in range(config.g_rounds):
                g_loss, g_grad = generator_loss_grad(gen, disc, sample_noise(rng, L, m), y,
                                                     config.loss_form)
                if not np.isfinite(g_loss):
                    raise NonFiniteError(f"generator loss non-finite at epoch {epoch}, item {item}")
                new, adam = adam_update(gen.params, g_grad, adam, config.learning_rate)
                gen = gen.with_params(new)
                g_sum += g_loss / config.g_rounds
        history.d_loss.append(d_sum / len(trips))
        history.g_loss.append(g_sum / len(trips))
        if epoch % 100 == 0 or epoch == config.epochs - 1:
            log.debug("rcgan epoch %d d_loss %.4f g_loss %.4f", epoch,
                      history.d_loss[-1], history.g_loss[-1])
    return gen, disc, history


def synthesize(gen: GeneratorNet, ratio: float, base_count: int, rng: np.random.Generator,
               seq_len: int = 60, id_prefix: str = "fake") -> list[Trip]:
    """ratio * base_count labeled trips, half normal then half aggressive."""
    n = ratio * base_count
    if ratio < 0 or abs(n - round(n)) > 1e-9:
        raise ContractError(f"ratio {ratio} x {base_count} is not a whole number of trips")
    n = int(round(n))
    if n % N_CLASSES:
        raise ContractError(f"{n} trips cannot be split evenly across {N_CLASSES} classes")
    per_class = n // N_CLASSES
    trips: list[Trip] = []
    if per_class == 0:
        return trips
    for label in CLASSES:
        Z = np.stack([sample_noise(rng, seq_len, gen.latent) for _ in range(per_class)])
        values = generate_values(gen, Z, condition(label))
        for k in range(per_class):
            trips.append(Trip(values[k], label, f"{id_prefix}{len(trips):04d}"))
    return trips


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path: str | Path, net: GeneratorNet | DiscriminatorNet,
                    config: RcganConfig, provenance: dict | None = None) -> None:
    kind = "generator" if isinstance(net, GeneratorNet) else "discriminator"
    obj = {"kind": kind, "config": asdict(config), "params": net.params.to_json()}
    if provenance:
        obj["_provenance"] = provenance
    Path(path).write_text(json.dumps(obj) + "\n")


def load_checkpoint(path: str | Path) -> tuple[GeneratorNet | DiscriminatorNet, RcganConfig]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ContractError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    try:
        config = RcganConfig.from_dict(obj["config"])
        params = ParamVector.from_json(obj["params"])
        kind = obj["kind"]
    except (KeyError, TypeError) as exc:
        raise ContractError(f"{path}: not an RCGAN checkpoint ({exc})") from exc
    if kind == "generator":
        net = GeneratorNet(params, config.latent, config.hidden, config.channels)
        expected = GeneratorNet.layout(config.latent, config.hidden, config.channels)
    elif kind == "discriminator":
        net = DiscriminatorNet(params, config.hidden, config.channels)
        expected = DiscriminatorNet.layout(config.hidden, config.channels)
    else:
        raise ContractError(f"{path}: unknown checkpoint kind {kind!r}")
    if params.layout != tuple((n, tuple(s)) for n, s in expected):
        raise ContractError(f"{path}: parameter shapes do not match the embedded config")
    return net, config
