"""Minimal feedforward substrate: tanh MLPs, reverse-mode gradients, Adam.

Everything is plain numpy with float64 parameters.  Gradients are exact
vector-Jacobian products (verified against central finite differences in
the test suite), and all initialization is seeded, so two networks built
from the same seed are bit-identical.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = "mcpsim-mlp-v1"


class NNError(ValueError):
    """Raised on shape mismatches or malformed checkpoints."""


@dataclass
class Mlp:
    """Fully-connected net with tanh hidden layers.

    ``weights[i]`` has shape (fan_in, fan_out) and ``biases[i]`` shape
    (fan_out,).  The output layer is linear or tanh.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_activation: str = "linear"

    def __post_init__(self) -> None:
        if self.output_activation not in ("linear", "tanh"):
            raise NNError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise NNError("weight count does not match layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise NNError(f"layer {i} shape mismatch: {w.shape} vs {expect}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def copy(self) -> "Mlp":
        return Mlp(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
        )


def init_mlp(layer_sizes, output_activation: str, seed: int) -> Mlp:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise NNError(f"bad layer sizes {sizes}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(sizes, weights, biases, output_activation)


def _forward_cached(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Run a (batch, in_dim) input through the net, returning all activations."""
    acts = [x]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        if i < last or net.output_activation == "tanh":
            z = np.tanh(z)
        acts.append(z)
    return acts


def _as_batch(net: Mlp, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.in_dim:
        raise NNError(f"input shape {arr.shape} incompatible with {net.layer_sizes}")
    return arr, single


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate the net on a single input vector or a (batch, in) matrix."""
    arr, single = _as_batch(net, x)
    out = _forward_cached(net, arr)[-1]
    return out[0] if single else out


def backward(net: Mlp, x, upstream_grad) -> dict[str, list[np.ndarray] | np.ndarray]:
    """Exact gradients of sum(output * upstream_grad) w.r.t. params and input.

    ``upstream_grad`` must broadcast to the output shape; batched inputs sum
    the parameter gradients over the batch and return per-row input grads.
    """
    arr, single = _as_batch(net, x)
    up = np.asarray(upstream_grad, dtype=np.float64)
    if single:
        up = up[None, :]
    if up.shape != (arr.shape[0], net.out_dim):
        raise NNError(f"upstream shape {up.shape} incompatible with output")
    acts = _forward_cached(net, arr)
    w_grads, b_grads, x_grad = _vjp(net, acts, up)
    return {
        "weights": w_grads,
        "biases": b_grads,
        "input": x_grad[0] if single else x_grad,
    }


def _vjp(
    net: Mlp, acts: list[np.ndarray], upstream: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    last = len(net.weights) - 1
    delta = upstream
    if net.output_activation == "tanh":
        delta = delta * (1.0 - acts[-1] ** 2)
    w_grads = [np.empty(0)] * len(net.weights)
    b_grads = [np.empty(0)] * len(net.biases)
    for i in range(last, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    return w_grads, b_grads, delta


def flatten_params(net: Mlp) -> np.ndarray:
    """Policy parameters as one flat vector (row-major per layer)."""
    return np.concatenate([p.ravel() for p in net.parameters()])


def set_flat_params(net: Mlp, theta: np.ndarray) -> None:
    theta = np.asarray(theta, dtype=np.float64)
    offset = 0
    for p in net.parameters():
        p[...] = theta[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != theta.size:
        raise NNError(f"theta has {theta.size} entries, net needs {offset}")


def flatten_grads(net: Mlp, grads: dict) -> np.ndarray:
    flat = []
    for w, b in zip(grads["weights"], grads["biases"]):
        flat.append(w.ravel())
        flat.append(b.ravel())
    return np.concatenate(flat)


@dataclass
class AdamState:
    """Adam moment accumulators for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(net: Mlp, lr: float = 1e-3) -> AdamState:
    params = net.parameters()
    return AdamState(
        lr=lr,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(net: Mlp, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` follows the layout returned by :func:`backward`; pass the
    gradient of the loss to MINIMIZE.
    """
    flat_grads: list[np.ndarray] = []
    for w, b in zip(grads["weights"], grads["biases"]):
        flat_grads.append(w)
        flat_grads.append(b)
    params = net.parameters()
    if len(flat_grads) != len(params):
        raise NNError("gradient layout does not match network")
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, flat_grads, state.m, state.v):
        if g.shape != p.shape:
            raise NNError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


def save_checkpoint(net: Mlp, path: str | Path, extra: dict | None = None) -> None:
    """Bit-exact binary dump with a version tag and payload digest."""
    arrays: dict[str, np.ndarray] = {
        "layer_sizes": np.asarray(net.layer_sizes, dtype=np.int64),
        "output_activation": np.frombuffer(
            net.output_activation.encode("ascii"), dtype=np.uint8
        ),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    for key, value in (extra or {}).items():
        arrays[f"x_{key}"] = np.asarray(value)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).hexdigest().encode("ascii")
    header = CHECKPOINT_VERSION.encode("ascii") + b"\n" + digest + b"\n"
    Path(path).write_bytes(header + payload)


def load_checkpoint(path: str | Path) -> tuple[Mlp, dict]:
    """Inverse of :func:`save_checkpoint`; rejects bad versions or digests."""
    raw = Path(path).read_bytes()
    try:
        version, digest, payload = raw.split(b"\n", 2)
    except ValueError as exc:
        raise NNError("truncated checkpoint") from exc
    if version.decode("ascii", "replace") != CHECKPOINT_VERSION:
        raise NNError(f"unsupported checkpoint version {version!r}")
    if hashlib.sha256(payload).hexdigest().encode("ascii") != digest:
        raise NNError("checkpoint payload does not match its signature")
    with np.load(io.BytesIO(payload)) as data:
        sizes = tuple(int(s) for s in data["layer_sizes"])
        out_act = bytes(data["output_activation"]).decode("ascii")
        weights = [data[f"w{i}"].copy() for i in range(len(sizes) - 1)]
        biases = [data[f"b{i}"].copy() for i in range(len(sizes) - 1)]
        extra = {
            key[2:]: data[key].copy() for key in data.files if key.startswith("x_")
        }
    return Mlp(sizes, weights, biases, out_act), extra
