"""Vanilla RNN and peephole LSTM cells with exact backpropagation through time.

LSTM weights are stored stacked by gate, rows ordered ``[i, f, o, c]``::

    W : (4H, d_in)   input weights
    U : (4H, H)      recurrent weights
    V : (3H,)        diagonal peephole weights on c_{t-1}, order [i, f, o]
    b : (4H,)        biases

The gates follow

    i_t = sig(W_i x_t + U_i h_{t-1} + V_i * c_{t-1} + b_i)
    f_t = sig(W_f x_t + U_f h_{t-1} + V_f * c_{t-1} + b_f)
    o_t = sig(W_o x_t + U_o h_{t-1} + V_o * c_{t-1} + b_o)
    c_t = f_t * c_{t-1} + i_t * tanh(W_c x_t + U_c h_{t-1} + b_c)
    h_t = o_t * tanh(c_t)

with h_0 = c_0 = 0. Forward/backward work on batches shaped ``(B, L, d)``;
backward is full (untruncated) BPTT.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .numerics import ContractError, NonFiniteError, ParamVector, sigmoid, softmax, uniform_init

INIT_SCALE = 0.08


class LstmParams(NamedTuple):
    W: np.ndarray
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    def to_param_vector(self) -> ParamVector:
        return ParamVector.from_dict(self._asdict())


class RnnParams(NamedTuple):
    W: np.ndarray    # (H, d_in)
    U: np.ndarray    # (H, H)
    b: np.ndarray    # (H,)
    W_p: np.ndarray  # (d_out, H)
    b_p: np.ndarray  # (d_out,)

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def to_param_vector(self) -> ParamVector:
        return ParamVector.from_dict(self._asdict())


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def lstm_layout(d_in: int, hidden: int, prefix: str = "") -> tuple:
    H = hidden
    return ((prefix + "W", (4 * H, d_in)), (prefix + "U", (4 * H, H)),
            (prefix + "V", (3 * H,)), (prefix + "b", (4 * H,)))


def lstm_view(pv: ParamVector, prefix: str = "") -> LstmParams:
    """LstmParams whose arrays are views into ``pv``."""
    return LstmParams(pv[prefix + "W"], pv[prefix + "U"], pv[prefix + "V"], pv[prefix + "b"])


def init_lstm(rng: np.random.Generator, d_in: int, hidden: int) -> LstmParams:
    return lstm_view(uniform_init(rng, lstm_layout(d_in, hidden), INIT_SCALE))


def init_rnn(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> RnnParams:
    layout = (("W", (hidden, d_in)), ("U", (hidden, hidden)), ("b", (hidden,)),
              ("W_p", (d_out, hidden)), ("b_p", (d_out,)))
    pv = uniform_init(rng, layout, INIT_SCALE)
    return RnnParams(*(pv[name] for name in RnnParams._fields))


def _check_lstm(params: LstmParams) -> int:
    H = params.U.shape[1]
    if (params.U.shape != (4 * H, H) or params.W.shape[0] != 4 * H
            or params.V.shape != (3 * H,) or params.b.shape != (4 * H,)):
        raise ContractError("inconsistent LSTM parameter shapes")
    return H


# --------------------------------------------------------------------------
# vanilla RNN
# --------------------------------------------------------------------------

def rnn_step(params: RnnParams, x_t: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    W, U, b = params.W, params.U, params.b
    if x_t.shape[-1] != W.shape[1] or h_prev.shape[-1] != U.shape[0]:
        raise ContractError(f"rnn_step: x {x_t.shape}, h {h_prev.shape} vs W {W.shape}")
    return np.tanh(x_t @ W.T + h_prev @ U.T + b)


def rnn_output(params: RnnParams, h_t: np.ndarray) -> np.ndarray:
    if h_t.shape[-1] != params.W_p.shape[1]:
        raise ContractError(f"rnn_output: h {h_t.shape} vs W_p {params.W_p.shape}")
    return softmax(h_t @ params.W_p.T + params.b_p)


def _rnn_forward(params: RnnParams, X: np.ndarray) -> np.ndarray:
    B, L, _ = X.shape
    Hs = np.empty((B, L, params.hidden))
    h = np.zeros((B, params.hidden))
    for t in range(L):
        h = rnn_step(params, X[:, t], h)
        Hs[:, t] = h
    _first_nonfinite(Hs, "forward")
    return Hs


def _rnn_backward(params: RnnParams, X: np.ndarray, Hs: np.ndarray,
                  dP: np.ndarray) -> tuple[RnnParams, np.ndarray]:
    """Gradients given dLoss/dp_t for the per-step softmax outputs."""
    B, L, _ = X.shape
    P = rnn_output(params, Hs)
    dZp = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dW_p = np.einsum("blo,blh->oh", dZp, Hs)
    db_p = dZp.sum(axis=(0, 1))
    dH = dZp @ params.W_p
    dZ = np.empty_like(Hs)
    dh = np.zeros((B, params.hidden))
    for t in range(L - 1, -1, -1):
        dz = (dH[:, t] + dh) * (1.0 - Hs[:, t] ** 2)
        dZ[:, t] = dz
        dh = dz @ params.U
    _first_nonfinite(dZ, "backward")
    H_prev = np.concatenate([np.zeros((B, 1, params.hidden)), Hs[:, :-1]], axis=1)
    grads = RnnParams(
        W=np.einsum("blh,bld->hd", dZ, X),
        U=np.einsum("blh,blk->hk", dZ, H_prev),
        b=dZ.sum(axis=(0, 1)),
        W_p=dW_p,
        b_p=db_p,
    )
    return grads, dZ @ params.W


# --------------------------------------------------------------------------
# LSTM
# --------------------------------------------------------------------------

def lstm_step(params: LstmParams, x_t: np.ndarray, state_prev: LstmState) -> LstmState:
    H = _check_lstm(params)
    if x_t.shape[-1] != params.W.shape[1] or state_prev.h.shape[-1] != H:
        raise ContractError(f"lstm_step: x {x_t.shape}, h {state_prev.h.shape} vs W {params.W.shape}")
    c_prev = state_prev.c
    z = x_t @ params.W.T + state_prev.h @ params.U.T + params.b
    i = sigmoid(z[..., :H] + params.V[:H] * c_prev)
    f = sigmoid(z[..., H:2 * H] + params.V[H:2 * H] * c_prev)
    o = sigmoid(z[..., 2 * H:3 * H] + params.V[2 * H:] * c_prev)
    c = f * c_prev + i * np.tanh(z[..., 3 * H:])
    return LstmState(o * np.tanh(c), c)


@dataclass
class LstmCache:
    """Everything the backward pass needs from one forward pass."""

    X: np.ndarray      # (B, L, d_in)
    H: np.ndarray      # (B, L, H) hidden states h_1..h_L
    C: np.ndarray      # (B, L+1, H) cell states c_0..c_L
    G: np.ndarray      # (B, L, 4H) activated gates [i, f, o, g]
    TC: np.ndarray     # (B, L, H) tanh(c_t)


def lstm_forward(params: LstmParams, X: np.ndarray) -> LstmCache:
    """Unroll over ``X`` shaped (B, L, d_in) from the zero state."""
    Hn = _check_lstm(params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] < 1:
        raise ContractError(f"lstm_forward expects (B, L>=1, d_in) input, got {X.shape}")
    if X.shape[2] != params.W.shape[1]:
        raise ContractError(f"input width {X.shape[2]} != W columns {params.W.shape[1]}")
    B, L, _ = X.shape
    H3 = 3 * Hn
    Zx = X @ params.W.T + params.b
    UT = params.U.T
    V = params.V
    Hs = np.empty((B, L, Hn))
    Cs = np.empty((B, L + 1, Hn))
    Cs[:, 0] = 0.0
    G = np.empty((B, L, 4 * Hn))
    TC = np.empty((B, L, Hn))
    h = np.zeros((B, Hn))
    c = Cs[:, 0]
    for t in range(L):
        z = Zx[:, t] + h @ UT
        g = G[:, t]
        # peephole term hits the three sigmoid gates, all of which see c_{t-1}
        g[:, :H3] = sigmoid(z[:, :H3] + np.tile(c, 3) * V)
        np.tanh(z[:, H3:], out=g[:, H3:])
        c = g[:, Hn:2 * Hn] * c + g[:, :Hn] * g[:, H3:]
        tc = np.tanh(c)
        h = g[:, 2 * Hn:H3] * tc
        Cs[:, t + 1] = c
        TC[:, t] = tc
        Hs[:, t] = h
    _first_nonfinite(Cs[:, 1:], "forward")
    return LstmCache(X, Hs, Cs, G, TC)


def lstm_backward(params: LstmParams, cache: LstmCache, dH: np.ndarray,
                  need_dx: bool = False) -> tuple[LstmParams, np.ndarray | None]:
    """Full BPTT. ``dH`` is dLoss/dh_t for every step, shaped like ``cache.H``.

    Returns parameter gradients (summed over the batch) and, if requested,
    dLoss/dx_t shaped like ``cache.X``.
    """
    Hn = params.U.shape[1]
    H2, H3 = 2 * Hn, 3 * Hn
    B, L, _ = cache.H.shape
    if dH.shape != cache.H.shape:
        raise ContractError(f"dH shape {dH.shape} != hidden shape {cache.H.shape}")
    U = params.U
    Vi, Vf, Vo = params.V[:Hn], params.V[Hn:H2], params.V[H2:]
    dZ = np.empty((B, L, 4 * Hn))
    dh = np.zeros((B, Hn))
    dc = np.zeros((B, Hn))
    for t in range(L - 1, -1, -1):
        g = cache.G[:, t]
        i, f, o, gg = g[:, :Hn], g[:, Hn:H2], g[:, H2:H3], g[:, H3:]
        tc = cache.TC[:, t]
        c_prev = cache.C[:, t]
        dht = dH[:, t] + dh
        dz = dZ[:, t]
        dz[:, H2:H3] = dht * tc * o * (1.0 - o)
        dct = dc + dht * o * (1.0 - tc * tc)
        dz[:, :Hn] = dct * gg * i * (1.0 - i)
        dz[:, Hn:H2] = dct * c_prev * f * (1.0 - f)
        dz[:, H3:] = dct * i * (1.0 - gg * gg)
        dc = dct * f + dz[:, :Hn] * Vi + dz[:, Hn:H2] * Vf + dz[:, H2:H3] * Vo
        dh = dz @ U
    _first_nonfinite(dZ, "backward")

    H_prev = np.empty_like(cache.H)
    H_prev[:, 0] = 0.0
    H_prev[:, 1:] = cache.H[:, :-1]
    dZ2 = dZ.reshape(B * L, 4 * Hn)
    C_prev = cache.C[:, :-1].reshape(B * L, Hn)
    dV = np.concatenate([
        np.einsum("nh,nh->h", dZ2[:, :Hn], C_prev),
        np.einsum("nh,nh->h", dZ2[:, Hn:H2], C_prev),
        np.einsum("nh,nh->h", dZ2[:, H2:H3], C_prev),
    ])
    grads = LstmParams(
        W=dZ2.T @ cache.X.reshape(B * L, -1),
        U=dZ2.T @ H_prev.reshape(B * L, Hn),
        V=dV,
        b=dZ2.sum(axis=0),
    )
    dX = (dZ @ params.W) if need_dx else None
    return grads, dX


def _first_nonfinite(arr: np.ndarray, phase: str) -> None:
    """Raise naming the earliest time step (axis 1) holding a NaN/inf."""
    if np.all(np.isfinite(arr)):
        return
    bad = ~np.isfinite(arr)
    steps = np.nonzero(bad.any(axis=tuple(a for a in range(arr.ndim) if a != 1)))[0]
    raise NonFiniteError(f"non-finite value in {phase} pass at time step {int(steps[0])}")


def _as_batch(inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ContractError("unroll expects a non-empty sequence of input vectors")
    return X[None]


def unroll(params: LstmParams | RnnParams, inputs) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Run a cell over a (L, d_in) sequence from the zero state.

    Returns the hidden sequence (L, H) for an RNN, and ``(hidden, cells)``
    both shaped (L, H) for an LSTM.
    """
    X = _as_batch(inputs)
    if isinstance(params, RnnParams):
        return _rnn_forward(params, X)[0]
    cache = lstm_forward(params, X)
    return cache.H[0], cache.C[0, 1:]


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def bptt(params: LstmParams | RnnParams, inputs, loss: LossFn) -> tuple[float, ParamVector]:
    """Loss and exact gradient over the fully unrolled sequence.

    ``loss`` maps the per-step outputs to ``(value, d_value/d_outputs)``.
    The outputs are the hidden states h_t (L, H) for an LSTM, and the softmax
    probabilities p_t (L, d_out) for an RNN with its output head.
    """
    X = _as_batch(inputs)
    if isinstance(params, RnnParams):
        Hs = _rnn_forward(params, X)
        value, dP = loss(rnn_output(params, Hs[0]))
        grads, _ = _rnn_backward(params, X, Hs, np.asarray(dP, dtype=np.float64)[None])
    else:
        cache = lstm_forward(params, X)
        value, dH = loss(cache.H[0])
        grads, _ = lstm_backward(params, cache, np.asarray(dH, dtype=np.float64)[None])
    if not np.isfinite(value):
        raise NonFiniteError("non-finite loss value")
    return float(value), grads.to_param_vector()
