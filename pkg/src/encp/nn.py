"""Minimal dense MLP with exact reverse-mode gradients and an Adam optimizer.

Everything is float64 numpy; batches are row-major ``(N, dim)``.  A layer
computes ``h @ W.T + b`` with the activation applied to hidden layers only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ACTIVATIONS",
    "MlpParams",
    "AdamState",
    "init_mlp",
    "forward",
    "forward_backward",
    "adam_init",
    "adam_step",
    "flatten_params",
    "save_checkpoint",
    "load_checkpoint",
]


def _tanh(x):
    return np.tanh(x)


def _tanh_grad(x, y):
    return 1.0 - y * y


def _elu(x):
    return np.where(x > 0, x, np.expm1(x))


def _elu_grad(x, y):
    return np.where(x > 0, 1.0, y + 1.0)


def _identity(x):
    return x


def _identity_grad(x, y):
    return np.ones_like(x)


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_grad),
    "elu": (_elu, _elu_grad),
    "identity": (_identity, _identity_grad),
}


@dataclass
class MlpParams:
    """Layer list of ``(weight, bias)`` pairs plus the hidden activation name."""

    layers: list  # [(W_i of shape (out, in), b_i of shape (out,)), ...]
    activation: str = "tanh"

    @property
    def dims(self) -> list:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)

    def validate(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(self.layers):
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} != ({w.shape[0]},)")
            if i > 0 and w.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ValueError(f"layer {i}: input dim mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")


def init_mlp(dims: list, activation: str, rng: np.random.Generator) -> MlpParams:
    """Variance-preserving init: W ~ N(0, 2/(fan_in+fan_out)), biases zero."""
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (d_in + d_out))
        layers.append((rng.standard_normal((d_out, d_in)) * std, np.zeros(d_out)))
    return MlpParams(layers, activation)


def forward(params: MlpParams, batch: np.ndarray) -> np.ndarray:
    """Forward pass only; ``batch`` is ``(N, d_in)``."""
    out, _ = _forward_cached(params, np.asarray(batch, dtype=float))
    return out


def _forward_cached(params: MlpParams, batch: np.ndarray):
    act, _ = ACTIVATIONS[params.activation]
    h = batch
    cache = []  # (input, pre-activation, post-activation or None)
    n_layers = len(params.layers)
    for i, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        if i < n_layers - 1:
            a = act(z)
            cache.append((h, z, a))
            h = a
        else:
            cache.append((h, z, None))
            h = z
    return h, cache


def forward_backward(params: MlpParams, batch: np.ndarray, upstream_grad: np.ndarray):
    """Outputs plus exact gradients of ``sum(upstream * output)``.

    Returns ``(outputs, param_grads, input_grads)`` where ``param_grads``
    mirrors ``params.layers`` as ``(dW, db)`` pairs.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != params.layers[0][0].shape[1]:
        raise ValueError(
            f"batch shape {batch.shape} incompatible with input dim "
            f"{params.layers[0][0].shape[1]}"
        )
    out, cache = _forward_cached(params, batch)
    upstream = np.asarray(upstream_grad, dtype=float)
    if upstream.shape != out.shape:
        raise ValueError(f"upstream grad shape {upstream.shape} != output shape {out.shape}")
    _, act_grad = ACTIVATIONS[params.activation]
    grads = [None] * len(params.layers)
    delta = upstream
    for i in reversed(range(len(params.layers))):
        w, _ = params.layers[i]
        h_in, _, _ = cache[i]
        dw = delta.T @ h_in
        db = delta.sum(axis=0)
        grads[i] = (dw, db)
        delta = delta @ w
        if i > 0:
            h_prev, z_prev, a_prev = cache[i - 1]
            delta = delta * act_grad(z_prev, a_prev)
    return out, grads, delta


@dataclass
class AdamState:
    """First/second moment buffers matching a parameter list, plus step count."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, lr: float = 1e-3) -> AdamState:
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    return AdamState(m=m, v=v, lr=lr)


def _adam_update(x, g, m, v, state):
    m_new = state.beta1 * m + (1 - state.beta1) * g
    v_new = state.beta2 * v + (1 - state.beta2) * g * g
    m_hat = m_new / (1 - state.beta1**state.step)
    v_hat = v_new / (1 - state.beta2**state.step)
    return x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), m_new, v_new


def adam_step(state: AdamState, params: MlpParams, grads: list):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    state = AdamState(m=list(state.m), v=list(state.v), step=state.step + 1,
                      lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    new_layers = []
    for i, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads)):
        mw, mb = state.m[i]
        vw, vb = state.v[i]
        w_new, mw, vw = _adam_update(w, gw, mw, vw, state)
        b_new, mb, vb = _adam_update(b, gb, mb, vb, state)
        state.m[i] = (mw, mb)
        state.v[i] = (vw, vb)
        new_layers.append((w_new, b_new))
    return MlpParams(new_layers, params.activation), state


def flatten_params(params: MlpParams) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in params.layers])


# ---------------------------------------------------------------------------
# Checkpoint format: magic, little-endian header length, JSON header, then a
# flat little-endian float64 payload holding the arrays named in the header.
# ---------------------------------------------------------------------------

_MAGIC = b"ENCPCK01"


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    """Write a checkpoint with a JSON header and float64 payload.

    ``header['tensors']`` is filled with ``name -> shape`` in payload order.
    """
    names = sorted(arrays)
    header = dict(header)
    header["tensors"] = {name: list(np.asarray(arrays[name]).shape) for name in names}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(header, arrays)``."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["tensors"].items():
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)
    return header, arrays
