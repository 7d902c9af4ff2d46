"""Small feedforward / convolutional networks with exact reverse-mode gradients.

A network is described by a :class:`NetworkSpec` (an ordered list of named
layers) and its weights live in a separate ``ParamSet``: an ordered dict
mapping each parameterized layer name to ``{"weight": W, "bias": b}`` (the
bias key is absent for bias-free layers). Arrays inside a ParamSet are never
mutated in place; every update builds new arrays.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import Rng, as_tensor

ParamSet = Dict[str, Dict[str, np.ndarray]]
GradSet = Dict[str, Dict[str, np.ndarray]]


@dataclass(frozen=True)
class Linear:
    name: str
    in_features: int
    out_features: int
    bias: bool = True

    kind = "linear"


@dataclass(frozen=True)
class Conv2d:
    name: str
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    bias: bool = True

    kind = "conv2d"


@dataclass(frozen=True)
class ReLU:
    name: str

    kind = "relu"


@dataclass(frozen=True)
class Flatten:
    name: str

    kind = "flatten"


LayerSpec = Union[Linear, Conv2d, ReLU, Flatten]
PARAM_KINDS = ("linear", "conv2d")


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique: {names}")
        if not self.param_layers():
            raise ValueError("network needs at least one parameterized layer")
        shape = self.input_shape
        for layer in self.layers:
            shape = self._infer(layer, shape)
        if shape != (self.num_classes,):
            raise ValueError(f"network output shape {shape} != ({self.num_classes},)")

    @staticmethod
    def _infer(layer, shape):
        if layer.kind == "linear":
            if shape != (layer.in_features,):
                raise ValueError(f"{layer.name}: expects ({layer.in_features},), got {shape}")
            return (layer.out_features,)
        if layer.kind == "conv2d":
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise ValueError(f"{layer.name}: expects ({layer.in_channels}, H, W), got {shape}")
            h = _conv_out(shape[1], layer.kernel_size, layer.stride, layer.padding)
            w = _conv_out(shape[2], layer.kernel_size, layer.stride, layer.padding)
            if h <= 0 or w <= 0:
                raise ValueError(f"{layer.name}: kernel larger than padded input {shape}")
            return (layer.out_channels, h, w)
        if layer.kind == "flatten":
            return (int(np.prod(shape)),)
        return shape

    def param_layers(self) -> list:
        return [layer.name for layer in self.layers if layer.kind in PARAM_KINDS]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"unknown layer {name!r}")

    def index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(f"unknown layer {name!r}")

    def describe(self) -> str:
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind}
            entry.update({k: v for k, v in layer.__dict__.items()})
            layers.append(entry)
        return json.dumps(
            {"layers": layers, "input_shape": list(self.input_shape), "num_classes": self.num_classes},
            sort_keys=True,
            separators=(",", ":"),
        )

    def digest(self) -> bytes:
        return hashlib.sha256(self.describe().encode()).digest()


def param_shapes(layer) -> Dict[str, tuple]:
    if layer.kind == "linear":
        shapes = {"weight": (layer.out_features, layer.in_features)}
        if layer.bias:
            shapes["bias"] = (layer.out_features,)
        return shapes
    if layer.kind == "conv2d":
        k = layer.kernel_size
        shapes = {"weight": (layer.out_channels, layer.in_channels, k, k)}
        if layer.bias:
            shapes["bias"] = (layer.out_channels,)
        return shapes
    return {}


def init_params(spec: NetworkSpec, rng: Rng) -> ParamSet:
    """Fan-in uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases."""
    params: ParamSet = {}
    for layer in spec.layers:
        if layer.kind not in PARAM_KINDS:
            continue
        shapes = param_shapes(layer)
        w_shape = shapes["weight"]
        fan_in = int(np.prod(w_shape[1:]))
        bound = np.sqrt(1.0 / fan_in)
        entry = {"weight": rng.uniform(-bound, bound, size=w_shape)}
        if "bias" in shapes:
            entry["bias"] = np.zeros(shapes["bias"])
        params[layer.name] = entry
    return params


def check_params(spec: NetworkSpec, params: ParamSet) -> None:
    expected = spec.param_layers()
    if set(params) != set(expected):
        raise ValueError(f"ParamSet keys {list(params)} != network layers {expected}")
    for name in expected:
        shapes = param_shapes(spec.layer(name))
        got = {k: tuple(v.shape) for k, v in params[name].items()}
        if got != shapes:
            raise ValueError(f"{name}: parameter shapes {got} != {shapes}")


def copy_params(params: ParamSet) -> ParamSet:
    return {name: {k: v.copy() for k, v in entry.items()} for name, entry in params.items()}


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    """Bitwise equality of two ParamSets."""
    if list(a) != list(b):
        return False
    for name in a:
        if set(a[name]) != set(b[name]):
            return False
        for k in a[name]:
            x, y = a[name][k], b[name][k]
            if x.shape != y.shape or x.tobytes() != y.tobytes():
                return False
    return True


def module_vector(params: ParamSet, name: str) -> np.ndarray:
    """Weights then bias of one module, flattened into a single vector."""
    entry = params[name]
    parts = [entry["weight"].ravel()]
    if "bias" in entry:
        parts.append(entry["bias"].ravel())
    return np.concatenate(parts)


def with_module_vector(params: ParamSet, name: str, vec: np.ndarray) -> ParamSet:
    """Copy of ``params`` where module ``name`` is replaced by ``vec``."""
    out = dict(params)
    entry = params[name]
    w = entry["weight"]
    new = {"weight": np.array(vec[: w.size], dtype=np.float64).reshape(w.shape)}
    if "bias" in entry:
        new["bias"] = np.array(vec[w.size:], dtype=np.float64)
    out[name] = new
    return out


def num_params(params: ParamSet) -> int:
    return sum(v.size for entry in params.values() for v in entry.values())


# -- forward / backward -----------------------------------------------------


def _im2col(x, k, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(dcols, x_shape, k, stride, pad, ho, wo):
    n, c, h, w = x_shape
    dcols = dcols.reshape(n, ho, wo, c, k, k)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


def _check_batch(spec, batch):
    batch = as_tensor(batch)
    if batch.ndim != len(spec.input_shape) + 1 or batch.shape[1:] != spec.input_shape:
        raise ValueError(f"batch shape {batch.shape} incompatible with input shape {spec.input_shape}")
    return batch


def forward_cached(spec: NetworkSpec, params: ParamSet, batch):
    """Forward pass keeping what each layer needs for its backward step."""
    x = _check_batch(spec, batch)
    caches = []
    for layer in spec.layers:
        if layer.kind == "linear":
            entry = params[layer.name]
            caches.append(x)
            x = x @ entry["weight"].T
            if "bias" in entry:
                x = x + entry["bias"]
        elif layer.kind == "conv2d":
            entry = params[layer.name]
            k = layer.kernel_size
            cols, ho, wo = _im2col(x, k, layer.stride, layer.padding)
            caches.append((cols, x.shape, ho, wo))
            out = cols @ entry["weight"].reshape(layer.out_channels, -1).T
            if "bias" in entry:
                out = out + entry["bias"]
            x = out.reshape(x.shape[0], ho, wo, layer.out_channels).transpose(0, 3, 1, 2)
        elif layer.kind == "relu":
            mask = x > 0
            caches.append(mask)
            x = np.where(mask, x, 0.0)
        elif layer.kind == "flatten":
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
    return x, caches


def forward(spec: NetworkSpec, params: ParamSet, batch) -> np.ndarray:
    return forward_cached(spec, params, batch)[0]


def predict(spec: NetworkSpec, params: ParamSet, batch) -> np.ndarray:
    """Predicted class per sample; ties go to the lower class index."""
    return np.argmax(forward(spec, params, batch), axis=1)


def backprop(
    spec: NetworkSpec,
    params: ParamSet,
    caches,
    dlogits,
    wrt: Optional[Iterable[str]] = None,
    need_input_grad: bool = True,
):
    """Propagate ``dlogits`` back through the network.

    ``wrt`` restricts parameter gradients to a subset of modules. Without an
    input gradient, propagation stops at the earliest module in ``wrt``.
    Returns ``(grads, input_grad)``; ``input_grad`` is None when not needed.
    """
    wanted = set(spec.param_layers() if wrt is None else wrt)
    if need_input_grad:
        first = 0
    else:
        first = min(spec.index(name) for name in wanted) if wanted else len(spec.layers)
    grads: GradSet = {}
    g = dlogits
    for idx in range(len(spec.layers) - 1, first - 1, -1):
        layer = spec.layers[idx]
        cache = caches[idx]
        last = idx == first and not need_input_grad
        if layer.kind == "linear":
            w = params[layer.name]["weight"]
            if layer.name in wanted:
                entry = {"weight": g.T @ cache}
                if "bias" in params[layer.name]:
                    entry["bias"] = g.sum(axis=0)
                grads[layer.name] = entry
            if not last:
                g = g @ w
        elif layer.kind == "conv2d":
            w = params[layer.name]["weight"]
            cols, x_shape, ho, wo = cache
            gmat = g.transpose(0, 2, 3, 1).reshape(-1, layer.out_channels)
            if layer.name in wanted:
                entry = {"weight": (gmat.T @ cols).reshape(w.shape)}
                if "bias" in params[layer.name]:
                    entry["bias"] = gmat.sum(axis=0)
                grads[layer.name] = entry
            if not last:
                dcols = gmat @ w.reshape(layer.out_channels, -1)
                g = _col2im(dcols, x_shape, layer.kernel_size, layer.stride, layer.padding, ho, wo)
        elif layer.kind == "relu":
            g = np.where(cache, g, 0.0)
        elif layer.kind == "flatten":
            g = g.reshape(cache)
    ordered = {name: grads[name] for name in spec.param_layers() if name in grads}
    return ordered, (g if need_input_grad else None)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    return labels


def cross_entropy_per_sample(logits, labels) -> np.ndarray:
    logits = as_tensor(logits)
    labels = _check_labels(labels, logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return logz - shifted[np.arange(len(labels)), labels]


def loss_ce(logits, labels) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = as_tensor(logits)
    labels = _check_labels(labels, logits.shape[1])
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    losses = np.log(z) - shifted[np.arange(n), labels]
    dlogits = e / z[:, None]
    dlogits[np.arange(n), labels] -= 1.0
    return float(losses.mean()), dlogits / n


def backward(spec: NetworkSpec, params: ParamSet, batch, labels):
    """Mean cross-entropy with gradients for every parameter and the input."""
    logits, caches = forward_cached(spec, params, batch)
    loss, dlogits = loss_ce(logits, labels)
    grads, input_grad = backprop(spec, params, caches, dlogits)
    return loss, grads, input_grad


# -- optimizer --------------------------------------------------------------


def sgd_step(
    params: ParamSet,
    grads: GradSet,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    frozen: Sequence[str] = (),
    state: Optional[dict] = None,
) -> ParamSet:
    """One SGD-with-momentum step; frozen modules are returned untouched.

    ``state`` holds the momentum buffers and is updated in place:
    ``v <- momentum * v + (grad + weight_decay * w)``, ``w <- w - lr * v``.
    """
    frozen = set(frozen)
    unknown = frozen - set(params)
    if unknown:
        raise ValueError(f"frozen names not in ParamSet: {sorted(unknown)}")
    if state is None:
        state = {}
    out: ParamSet = {}
    for name, entry in params.items():
        if name in frozen or name not in grads:
            out[name] = entry
            continue
        buf = state.setdefault(name, {})
        new = {}
        for k, w in entry.items():
            d = grads[name][k]
            if weight_decay:
                d = d + weight_decay * w
            v = buf.get(k)
            v = d.copy() if v is None else momentum * v + d
            buf[k] = v
            new[k] = w - lr * v
        out[name] = new
    return out
