"""Dense numerical core: activations, optimizers, flat parameter vectors and a
finite-difference gradient oracle.

Everything is float64 numpy. Matrices are plain 2-D ndarrays; the only
container type here is :class:`ParamVector`, which stores all weights of a
network in one flat array and hands out named, reshaped *views* into it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np

__all__ = [
    "ContractError",
    "NonFiniteError",
    "ParamVector",
    "AdamState",
    "affine",
    "activation",
    "activation_grad",
    "sigmoid",
    "softmax",
    "maxout",
    "sgd_update",
    "adam_update",
    "numeric_gradient",
    "uniform_init",
    "max_relative_error",
    "fmt_float",
]

ACTIVATIONS = ("sigmoid", "tanh", "rectifier", "maxout")


class ContractError(ValueError):
    """A caller broke a documented precondition (shape, range, balance...)."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where a finite value is required."""


# --------------------------------------------------------------------------
# parameter vectors
# --------------------------------------------------------------------------

Layout = tuple[tuple[str, tuple[int, ...]], ...]


def _layout_size(layout: Layout) -> int:
    return sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)


@dataclass
class ParamVector:
    """Flat float64 vector plus a layout mapping slices back to named arrays.

    ``pv["W"]`` returns a writable view, so in-place edits of a named matrix
    are visible in ``pv.values`` and vice versa.
    """

    values: np.ndarray
    layout: Layout
    _offsets: dict[str, tuple[int, int, tuple[int, ...]]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ContractError("ParamVector values must be one-dimensional")
        self.layout = tuple((str(n), tuple(int(s) for s in shape)) for n, shape in self.layout)
        if _layout_size(self.layout) != self.values.size:
            raise ContractError(
                f"layout covers {_layout_size(self.layout)} values, got {self.values.size}"
            )
        self._offsets = {}
        start = 0
        for name, shape in self.layout:
            if name in self._offsets:
                raise ContractError(f"duplicate parameter name {name!r}")
            stop = start + int(np.prod(shape, dtype=np.int64))
            self._offsets[name] = (start, stop, shape)
            start = stop

    @classmethod
    def from_dict(cls, arrays: Mapping[str, np.ndarray], layout: Layout | None = None) -> "ParamVector":
        if layout is None:
            layout = tuple((k, np.shape(v)) for k, v in arrays.items())
        parts = []
        for name, shape in layout:
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != tuple(shape):
                raise ContractError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
            parts.append(a.ravel())
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, layout)

    def __getitem__(self, name: str) -> np.ndarray:
        start, stop, shape = self._offsets[name]
        return self.values[start:stop].reshape(shape)

    def __contains__(self, name: object) -> bool:
        return name in self._offsets

    def __iter__(self) -> Iterator[str]:
        return (name for name, _ in self.layout)

    def __len__(self) -> int:
        return self.values.size

    def names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def to_dict(self) -> dict[str, np.ndarray]:
        """Copies of every named array (not views)."""
        return {name: self[name].copy() for name in self}

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def check_same_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise ContractError("parameter layouts differ")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def to_json(self) -> dict:
        """Named matrices with explicit dimensions; floats keep full precision."""
        return {
            name: {"shape": list(shape), "data": self[name].ravel().tolist()}
            for name, shape in self.layout
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Mapping]) -> "ParamVector":
        layout = tuple((name, tuple(entry["shape"])) for name, entry in obj.items())
        arrays = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in obj.items()
        }
        return cls.from_dict(arrays, layout)


def uniform_init(rng: np.random.Generator, layout: Layout, scale: float = 0.08,
                 zero: tuple[str, ...] = ()) -> ParamVector:
    """Draw every parameter from U[-scale, scale]; names in ``zero`` start at 0."""
    arrays = {}
    for name, shape in layout:
        if name in zero:
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-scale, scale, size=shape)
    return ParamVector.from_dict(arrays, layout)


# --------------------------------------------------------------------------
# elementary maps
# --------------------------------------------------------------------------

def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``W @ x + b`` with shape checks. ``x`` may carry leading batch axes."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise ContractError(
            f"affine: W {W.shape}, x {x.shape}, b {b.shape} do not agree"
        )
    return x @ W.T + b


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def maxout(z: np.ndarray) -> np.ndarray:
    """Max over consecutive pairs along the last axis (two linear pieces per unit)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] % 2:
        raise ContractError(f"maxout needs an even number of inputs, got {z.shape[-1]}")
    return np.maximum(z[..., 0::2], z[..., 1::2])


def activation(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(np.asarray(z, dtype=np.float64))
    if kind == "rectifier":
        return np.maximum(np.asarray(z, dtype=np.float64), 0.0)
    if kind == "maxout":
        return maxout(z)
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(kind: str, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pull ``upstream`` (shaped like ``activation(kind, z)``) back onto ``z``.

    For maxout the gradient goes to the larger piece of each pair; exact ties
    route it to the first piece.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "sigmoid":
        s = sigmoid(z)
        return upstream * s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(z)
        return upstream * (1.0 - t * t)
    if kind == "rectifier":
        return upstream * (z > 0)
    if kind == "maxout":
        if z.shape[-1] % 2:
            raise ContractError(f"maxout needs an even number of inputs, got {z.shape[-1]}")
        first = z[..., 0::2] >= z[..., 1::2]
        out = np.zeros_like(z)
        out[..., 0::2] = np.where(first, upstream, 0.0)
        out[..., 1::2] = np.where(first, 0.0, upstream)
        return out
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the max so large logits are safe."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

def sgd_update(theta: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    """Plain gradient descent step; returns a new vector."""
    theta.check_same_layout(grad)
    return theta.with_values(theta.values - lr * grad.values)


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n: int, **kw) -> "AdamState":
        return cls(0, np.zeros(n), np.zeros(n), **kw)


def adam_update(theta: ParamVector, grad: ParamVector, state: AdamState,
                lr: float) -> tuple[ParamVector, AdamState]:
    """One bias-corrected ADAM step. Pure: inputs are never modified."""
    theta.check_same_layout(grad)
    if state.m.shape != theta.values.shape or state.v.shape != theta.values.shape:
        raise ContractError("ADAM moments do not match the parameter layout")
    g = grad.values
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new = theta.values - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return (theta.with_values(new),
            AdamState(step, m, v, state.beta1, state.beta2, state.epsilon))


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------

def numeric_gradient(f: Callable, theta: ParamVector | np.ndarray | float,
                     h: float = 1e-5):
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``theta`` may be a :class:`ParamVector` (``f`` receives a ParamVector),
    an array or a plain float (``f`` receives the same kind); the gradient
    comes back in the same kind.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    if isinstance(theta, ParamVector):
        work = theta.copy()
        flat = work.values
        call = lambda: f(work)
    elif np.ndim(theta) == 0:
        flat = np.array([float(theta)])
        call = lambda: f(flat[0])
    else:
        work = np.array(theta, dtype=np.float64)
        flat = work.reshape(-1)
        call = lambda: f(work)

    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(call())
        flat[i] = orig - h
        fm = float(call())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)

    if isinstance(theta, ParamVector):
        return theta.with_values(grad)
    if np.ndim(theta) == 0:
        return float(grad[0])
    return grad.reshape(np.shape(theta))


def fmt_float(x) -> str:
    """Shortest text that reads back as the same float64 (numpy scalars included)."""
    return repr(float(x))


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|, |b|, floor) over coordinates.

    The floor keeps coordinates whose true gradient is ~0 from turning
    finite-difference round-off into a huge ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
