"""Small dense networks with hand-written backprop and an Adam optimizer.

Only what the actor/critic and VAE-GAN topologies need: fully connected
layers, a handful of activations, batched forward/backward, and a flat
``.npz`` checkpoint container.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity", "softmax")
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7


class ShapeError(ValueError):
    """Raised on a dimension mismatch between a network and its inputs."""


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "identity":
        return z
    if kind == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(kind: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return g * (z > 0)
    if kind == "tanh":
        return g * (1.0 - a * a)
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    if kind == "identity":
        return g
    if kind == "softmax":
        return a * (g - np.sum(g * a, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


class DenseNet:
    """Feed-forward MLP. ``weights[k]`` has shape ``(dims[k], dims[k+1])``."""

    def __init__(
        self,
        layer_dims: list[int],
        activations: list[str],
        rng: np.random.Generator | None = None,
    ):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2:
            raise ShapeError("a network needs at least an input and an output dimension")
        if len(activations) != len(layer_dims) - 1:
            raise ShapeError(
                f"{len(layer_dims) - 1} layers but {len(activations)} activations"
            )
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.layer_dims = layer_dims
        self.activations = list(activations)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters interleaved as ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.layer_dims = list(self.layer_dims)
        clone.activations = list(self.activations)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def load_params(self, params: list[np.ndarray]) -> None:
        if len(params) != 2 * len(self.weights):
            raise ShapeError("parameter list length does not match the network")
        for k in range(len(self.weights)):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ShapeError(f"layer {k}: parameter shape mismatch")
            self.weights[k][...] = w
            self.biases[k][...] = b

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, x) -> tuple[np.ndarray, list]:
        return forward(self, x)

    def backward(self, cache, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        return backward(self, cache, grad_out)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]

    def __repr__(self) -> str:
        return f"DenseNet({self.layer_dims}, {self.activations})"


def forward(net: DenseNet, x) -> tuple[np.ndarray, list]:
    """Run ``x`` (a vector or a batch of row vectors) through ``net``.

    Returns the output and a cache of per-layer ``(input, pre_activation,
    output)`` triples for :func:`backward`.
    """
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise ShapeError(f"expected input width {net.in_dim}, got shape {np.shape(x)}")
    layers = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w + b
        out = _activate(act, z)
        layers.append((a, z, out))
        a = out
    return (a[0] if single else a), [single, layers]


def backward(net: DenseNet, cache, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass. Gradients are summed over the batch.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    :meth:`DenseNet.params`.
    """
    single, layers = cache
    g = np.asarray(grad_out, dtype=float)
    if single:
        g = g[None, :]
    if len(layers) != len(net.weights):
        raise ShapeError("cache does not come from this network")
    if g.shape != layers[-1][2].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {layers[-1][2].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(layers))  # type: ignore[list-item]
    for k in range(len(layers) - 1, -1, -1):
        a_in, z, a_out = layers[k]
        dz = _activation_backward(net.activations[k], z, a_out, g)
        grads[2 * k] = a_in.T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        g = dz @ net.weights[k].T
    return grads, (g[0] if single else g)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Bias-corrected Adam update, applied in place. Returns ``params``."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params


def reparameterize(mu, log_var, noise) -> np.ndarray:
    """z = mu + exp(log_var / 2) * noise."""
    mu = np.asarray(mu, dtype=float)
    log_var = np.asarray(log_var, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise ShapeError("mu, log_var and noise must share a shape")
    return mu + np.exp(0.5 * log_var) * noise


def save_checkpoint(path, nets: dict[str, DenseNet], meta: dict | None = None) -> Path:
    """Write several named networks into one ``.npz`` container.

    Layout: ``__header__`` holds a JSON document with the format version,
    each net's layer dims and activations, and ``meta``; parameters live
    under ``<name>/W<k>`` and ``<name>/b<k>`` as row-major float64 arrays.
    """
    path = Path(path)
    header = {
        "format": "lemsim-densenet",
        "version": CHECKPOINT_VERSION,
        "nets": {
            name: {"layer_dims": net.layer_dims, "activations": net.activations}
            for name, net in nets.items()
        },
        "meta": meta or {},
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, net in nets.items():
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{k}"] = np.ascontiguousarray(w)
            arrays[f"{name}/b{k}"] = np.ascontiguousarray(b)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, DenseNet], dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != "lemsim-densenet":
            raise ValueError(f"{path}: not a lemsim checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")
        nets = {}
        for name, spec in header["nets"].items():
            net = DenseNet(spec["layer_dims"], spec["activations"])
            params = []
            for k in range(len(net.weights)):
                params.extend((data[f"{name}/W{k}"], data[f"{name}/b{k}"]))
            net.load_params(params)
            nets[name] = net
    return nets, header["meta"]
