"""Minimal fully connected network engine.

Dense layers with relu/tanh/sigmoid hidden activations and a bounded
output head (output_scale * tanh), reverse-mode gradients, Adam, and a
text model format whose round trip is bit-exact. Everything is float64;
the nets here are tiny, so there is no reason to give up gradient-check
precision.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

HIDDEN_ACTIVATIONS = ("relu", "tanh", "sigmoid")
OUTPUT_ACTIVATION = "scaled_tanh"
_ACT_IDS = {"relu": 0, "tanh": 1, "sigmoid": 2, OUTPUT_ACTIVATION: 3}

MODEL_FORMAT = "steerlab-mlp"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass
class Mlp:
    weights: list  # per layer, (out, in) float64
    biases: list   # per layer, (out,)
    activations: list  # per layer names; the last must be the scaled tanh head
    output_scale: float

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ValueError("weights, biases and activations must align")
        if self.activations[-1] != OUTPUT_ACTIVATION:
            raise ValueError("the last layer must use the scaled tanh head")
        for act in self.activations[:-1]:
            if act not in HIDDEN_ACTIVATIONS:
                raise ValueError(f"unknown hidden activation {act!r}")
        if OUTPUT_ACTIVATION in self.activations[:-1]:
            raise ValueError("only the last layer may use the scaled tanh head")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output dimension must be 1")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        self._packed = None

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.output_scale,
        )

    def packed(self):
        """Flat parameter layout for the compiled forward kernel."""
        if self._packed is None:
            params = np.concatenate(
                [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
            )
            dims = np.array(self.dims, dtype=np.int64)
            acts = np.array([_ACT_IDS[a] for a in self.activations], dtype=np.int64)
            self._packed = (params, dims, acts)
        return self._packed

    def invalidate(self) -> None:
        """Drop the packed cache after in-place parameter updates."""
        self._packed = None

    def forward(self, x) -> float:
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(
                f"input has shape {x.shape}, net expects ({self.input_dim},)"
            )
        params, dims, acts = self.packed()
        return float(kernels.mlp_forward(params, dims, acts, self.output_scale, x))

    def forward_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(
                f"batch has shape {X.shape}, net expects (B, {self.input_dim})"
            )
        z = X
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = _apply_act(z @ w.T + b, act, self.output_scale)
        return z[:, 0]


def _apply_act(z, act, scale):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return scale * np.tanh(z)


def init_glorot(dims, hidden_activation: str, output_scale: float, seed: int) -> Mlp:
    """Uniform Glorot weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for i in range(len(dims) - 1):
        nin, nout = dims[i], dims[i + 1]
        lim = np.sqrt(6.0 / (nin + nout))
        weights.append(rng.uniform(-lim, lim, size=(nout, nin)))
        biases.append(np.zeros(nout))
        acts.append(hidden_activation if i < len(dims) - 2 else OUTPUT_ACTIVATION)
    return Mlp(weights, biases, acts, output_scale)


def _forward_trace(net: Mlp, X):
    """Activations and pre-activations of every layer for backprop."""
    acts = [X]
    pres = []
    z = X
    for w, b, act in zip(net.weights, net.biases, net.activations):
        pre = z @ w.T + b
        pres.append(pre)
        z = _apply_act(pre, act, net.output_scale)
        acts.append(z)
    return acts, pres


def loss_mse(net: Mlp, X, y) -> float:
    """Mean squared error of the net's steering against the labels."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty batch")
    pred = net.forward_batch(X)
    return float(np.mean((pred - y) ** 2))


def backward_from_output(net: Mlp, X, dout):
    """Parameter gradients given dLoss/dOutput for each batch row."""
    X = np.asarray(X, dtype=float)
    dout = np.asarray(dout, dtype=float)
    acts, pres = _forward_trace(net, X)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    delta = dout[:, None]  # (B, 1)
    for layer in range(len(net.weights) - 1, -1, -1):
        pre = pres[layer]
        act = net.activations[layer]
        if act == "relu":
            delta = delta * (pre > 0.0)
        elif act == "tanh":
            delta = delta * (1.0 - np.tanh(pre) ** 2)
        elif act == "sigmoid":
            sig = 1.0 / (1.0 + np.exp(-pre))
            delta = delta * sig * (1.0 - sig)
        else:
            delta = delta * net.output_scale * (1.0 - np.tanh(pre) ** 2)
        grads_w[layer] = delta.T @ acts[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ net.weights[layer]
    return grads_w, grads_b


def backward(net: Mlp, X, y):
    """Gradients of the batch MSE loss; returns (grads_w, grads_b, loss)."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty batch")
    pred = net.forward_batch(X)
    resid = pred - y
    loss = float(np.mean(resid ** 2))
    dout = 2.0 * resid / y.size
    grads_w, grads_b = backward_from_output(net, X, dout)
    return grads_w, grads_b, loss


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


def adam_init(net: Mlp, learning_rate: float = 1e-3) -> AdamState:
    return AdamState(
        learning_rate=learning_rate,
        m_w=[np.zeros_like(w) for w in net.weights],
        v_w=[np.zeros_like(w) for w in net.weights],
        m_b=[np.zeros_like(b) for b in net.biases],
        v_b=[np.zeros_like(b) for b in net.biases],
    )


def adam_step(net: Mlp, grads_w, grads_b, state: AdamState) -> None:
    """Bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2, eps, lr = state.beta1, state.beta2, state.eps, state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for params, grads, ms, vs in (
        (net.weights, grads_w, state.m_w, state.v_w),
        (net.biases, grads_b, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(params, grads, ms, vs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    net.invalidate()


# --- model files ------------------------------------------------------------


def _emit(obj) -> str:
    """JSON text with floats at 17 significant digits (lossless for f64)."""
    if isinstance(obj, float):
        return format(obj, ".17g")
    if isinstance(obj, dict):
        inner = ", ".join(f"{json.dumps(k)}: {_emit(v)}" for k, v in obj.items())
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in obj) + "]"
    return json.dumps(obj)


def save(net: Mlp, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": net.dims,
        "activations": list(net.activations),
        "output_scale": float(net.output_scale),
        "layers": [
            {"w": [[float(v) for v in row] for row in w], "b": [float(v) for v in b]}
            for w, b in zip(net.weights, net.biases)
        ],
    }
    with open(path, "w") as fh:
        fh.write(_emit(doc))
        fh.write("\n")


def load(path) -> Mlp:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: missing the {MODEL_FORMAT!r} format marker")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {doc.get('version')!r}")
    try:
        dims = [int(d) for d in doc["dims"]]
        acts = [str(a) for a in doc["activations"]]
        scale = float(doc["output_scale"])
        layers = doc["layers"]
        weights = [np.array(layer["w"], dtype=float) for layer in layers]
        biases = [np.array(layer["b"], dtype=float) for layer in layers]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from exc
    for act in acts:
        if act not in HIDDEN_ACTIVATIONS and act != OUTPUT_ACTIVATION:
            raise ModelFormatError(f"{path}: unknown activation {act!r}")
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.ndim != 2 or w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
            raise ModelFormatError(f"{path}: layer {i} dimensions disagree with dims")
    try:
        return Mlp(weights, biases, acts, scale)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
