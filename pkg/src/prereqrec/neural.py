"""Small dense-network kernel: layers, losses, reverse-mode gradients and Adam.

Everything is float64 numpy. Inputs may be a single vector ``(in,)`` or a
batch ``(n, in)``; outputs follow the same shape convention.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")
CHECKPOINT_VERSION = 1


class GradientError(FloatingPointError):
    pass


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(z, a, name):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class DenseNet:
    layers: list[Layer]
    rng_seed: int = 0

    def __post_init__(self):
        for k in range(1, len(self.layers)):
            if self.layers[k].in_dim != self.layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k} expects {self.layers[k].in_dim} inputs, "
                    f"previous layer emits {self.layers[k - 1].out_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
                        self.rng_seed)

    def __call__(self, x):
        return forward(self, x)[0]


def init_net(sizes, activations, seed: int = 0) -> DenseNet:
    """Kaiming-style uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        bound = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(W, np.zeros(fan_out), act))
    return DenseNet(layers, seed)


def tower_sizes(in_dim: int, n_layers: int, hidden: int = 64, floor: int = 8) -> list[int]:
    """Layer widths for an ``n_layers``-deep tower ending in a scalar.

    Hidden widths start at ``hidden`` and halve per layer (never below
    ``floor``). ``n_layers=1`` is a plain linear readout.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    widths = [max(floor, hidden >> k) for k in range(n_layers - 1)]
    return [in_dim, *widths, 1]


def mlp(in_dim, n_layers, hidden=64, output="sigmoid", seed=0) -> DenseNet:
    sizes = tower_sizes(in_dim, n_layers, hidden)
    acts = ["relu"] * (n_layers - 1) + [output]
    return init_net(sizes, acts, seed)


def forward(net: DenseNet, x):
    """Returns ``(output, tape)``; the tape holds (input, pre-activation, output) per layer."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects {net.in_dim}")
    tape = []
    for layer in net.layers:
        z = h @ layer.W.T + layer.b
        a = _activate(z, layer.activation)
        tape.append((h, z, a))
        h = a
    return (h[0] if single else h), tape


def backward(net: DenseNet, tape, loss_grad):
    """Reverse pass.

    ``loss_grad`` is dL/d(output) with the output's shape. Returns
    ``(grads, input_grad)`` where ``grads`` lines up with ``net.params()``.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        h, z, a = tape[k]
        dz = g * _activation_grad(z, a, layer.activation)
        dW = dz.T @ h
        db = dz.sum(axis=0)
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise GradientError(f"non-finite gradient in layer {k}")
        grads[2 * k] = dW
        grads[2 * k + 1] = db
        g = dz @ layer.W
    return grads, g


# -- losses -----------------------------------------------------------------

BCE_CLAMP = 1e-12


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    return float(np.mean((pred - target) ** 2))


def grad_mse(pred, target):
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    return 2.0 * (pred - target) / pred.size


def loss_bce(pred, target) -> float:
    p = np.clip(np.asarray(pred, float), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(target, float)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def grad_bce(pred, target):
    p = np.clip(np.asarray(pred, float), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(target, float)
    return (p - t) / (p * (1.0 - p)) / p.size


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def step_adam(params, grads, state: AdamState, lr: float):
    """In-place Adam update; ``None`` gradients leave their parameter untouched."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- gradient verification --------------------------------------------------

LOSSES = {"mse": (loss_mse, grad_mse), "bce": (loss_bce, grad_bce)}


def check_gradients(net: DenseNet, x, target, loss: str = "mse", h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences over every parameter.

    Relative error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    f, df = LOSSES[loss]
    out, tape = forward(net, x)
    grads, _ = backward(net, tape, df(out, target))
    worst = 0.0
    for p, g in zip(net.params(), grads):
        for k in np.ndindex(p.shape):
            old = p[k]
            p[k] = old + h
            up = f(forward(net, x)[0], target)
            p[k] = old - h
            down = f(forward(net, x)[0], target)
            p[k] = old
            num = (up - down) / (2 * h)
            err = abs(g[k] - num) / max(1e-8, abs(g[k]) + abs(num))
            worst = max(worst, err)
    return worst


# -- checkpoints ------------------------------------------------------------

def net_to_arrays(net: DenseNet, prefix: str) -> tuple[dict, dict]:
    arrays = {}
    for k, layer in enumerate(net.layers):
        arrays[f"{prefix}.{k}.W"] = layer.W
        arrays[f"{prefix}.{k}.b"] = layer.b
    meta = {"activations": [l.activation for l in net.layers], "rng_seed": net.rng_seed}
    return arrays, meta


def net_from_arrays(arrays, meta, prefix: str) -> DenseNet:
    layers = [Layer(np.array(arrays[f"{prefix}.{k}.W"]), np.array(arrays[f"{prefix}.{k}.b"]), act)
              for k, act in enumerate(meta["activations"])]
    return DenseNet(layers, meta["rng_seed"])


def save_arrays(path, arrays: dict, meta: dict):
    """npz bundle with a JSON metadata entry; float64 arrays round-trip bit-exactly."""
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(
        json.dumps({"version": CHECKPOINT_VERSION, **meta}, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict, dict]:
    with np.load(Path(path)) as data:
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return arrays, meta


def save_net(net: DenseNet, path):
    arrays, meta = net_to_arrays(net, "net")
    save_arrays(path, arrays, meta)


def load_net(path) -> DenseNet:
    arrays, meta = load_arrays(path)
    return net_from_arrays(arrays, meta, "net")
