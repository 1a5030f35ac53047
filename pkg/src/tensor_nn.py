"""
Minimal classical network stack on numpy arrays.

Tensors are float64 ndarrays with a leading batch axis: images are
(batch, channels, height, width), vectors are (batch, features). Conv3x3 is
valid-padded with stride 1; MaxPool2x2 has stride 2 and drops an odd trailing
row/column.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, NumericError, ShapeError

Tensor = np.ndarray
Weights = Dict[str, np.ndarray]


# =============================================================================
# LAYER SPECS
# =============================================================================

class LayerKind(str, Enum):
    CONV3X3 = "conv3x3"
    MAXPOOL2X2 = "maxpool2x2"
    RELU = "relu"
    LINEAR = "linear"
    SIGMOID = "sigmoid"
    TANH = "tanh"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    fan_in: int = 0
    fan_out: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    def weight_shapes(self) -> Dict[str, Tuple[int, ...]]:
        if self.kind is LayerKind.CONV3X3:
            return {"W": (self.out_channels, self.in_channels, 3, 3), "b": (self.out_channels,)}
        if self.kind is LayerKind.LINEAR:
            return {"W": (self.fan_out, self.fan_in), "b": (self.fan_out,)}
        return {}

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "fan_in": self.fan_in, "fan_out": self.fan_out}


def conv3x3(in_channels: int, out_channels: int) -> LayerSpec:
    return LayerSpec(LayerKind.CONV3X3, in_channels=in_channels, out_channels=out_channels)


def maxpool2x2() -> LayerSpec:
    return LayerSpec(LayerKind.MAXPOOL2X2)


def relu() -> LayerSpec:
    return LayerSpec(LayerKind.RELU)


def linear(fan_in: int, fan_out: int) -> LayerSpec:
    return LayerSpec(LayerKind.LINEAR, fan_in=fan_in, fan_out=fan_out)


def sigmoid() -> LayerSpec:
    return LayerSpec(LayerKind.SIGMOID)


def tanh() -> LayerSpec:
    return LayerSpec(LayerKind.TANH)


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values at {where}")


# =============================================================================
# LAYER MATH
# =============================================================================

def _conv_forward(x: Tensor, w: Weights) -> Tuple[Tensor, Any]:
    windows = sliding_window_view(x, (3, 3), axis=(2, 3))  # (B, C, Ho, Wo, 3, 3)
    out = np.einsum("bchwij,ocij->bohw", windows, w["W"]) + w["b"][None, :, None, None]
    return out, x


def _conv_backward(x: Tensor, w: Weights, g: Tensor) -> Tuple[Tensor, Weights]:
    windows = sliding_window_view(x, (3, 3), axis=(2, 3))
    grads = {
        "W": np.einsum("bchwij,bohw->ocij", windows, g),
        "b": g.sum(axis=(0, 2, 3)),
    }
    gx = np.zeros_like(x)
    out_h, out_w = g.shape[2], g.shape[3]
    for i in range(3):
        for j in range(3):
            gx[:, :, i:i + out_h, j:j + out_w] += np.einsum("bohw,oc->bchw", g, w["W"][:, :, i, j])
    return gx, grads


def _pool_windows(x: Tensor) -> np.ndarray:
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    cropped = x[:, :, :2 * ho, :2 * wo]
    return cropped.reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)


def _pool_forward(x: Tensor) -> Tuple[Tensor, Any]:
    windows = _pool_windows(x)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, (x.shape, argmax)


def _pool_backward(cache: Any, g: Tensor) -> Tensor:
    shape, argmax = cache
    b, c, h, w = shape
    ho, wo = h // 2, w // 2
    routed = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(routed, argmax[..., None], g[..., None], axis=-1)
    routed = routed.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
    gx = np.zeros(shape)
    gx[:, :, :2 * ho, :2 * wo] = routed
    return gx


def _sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_input(spec: LayerSpec, x: Tensor, index: int) -> None:
    if spec.kind is LayerKind.CONV3X3:
        if x.ndim != 4 or x.shape[1] != spec.in_channels or x.shape[2] < 3 or x.shape[3] < 3:
            raise ShapeError(f"layer {index} (conv3x3) expects (B, {spec.in_channels}, H>=3, W>=3), got {x.shape}")
    elif spec.kind is LayerKind.MAXPOOL2X2:
        if x.ndim != 4 or x.shape[2] < 2 or x.shape[3] < 2:
            raise ShapeError(f"layer {index} (maxpool2x2) expects (B, C, H>=2, W>=2), got {x.shape}")
    elif spec.kind is LayerKind.LINEAR:
        if x.ndim < 2 or int(np.prod(x.shape[1:])) != spec.fan_in:
            raise ShapeError(f"layer {index} (linear) expects {spec.fan_in} features per sample, got {x.shape}")


# =============================================================================
# NETWORK
# =============================================================================

@dataclass
class ForwardCache:
    """Activations kept by forward() for the matching backward()."""
    owner: int
    entries: List[Any] = field(default_factory=list)


class Network:
    """An ordered stack of layers and their weights."""

    def __init__(self, specs: Sequence[LayerSpec], weights: Optional[List[Weights]] = None):
        self.specs: List[LayerSpec] = list(specs)
        if weights is None:
            weights = [{name: np.zeros(shape) for name, shape in spec.weight_shapes().items()} for spec in self.specs]
        self.weights: List[Weights] = [{k: np.asarray(v, dtype=float) for k, v in w.items()} for w in weights]
        self._validate()

    def _validate(self) -> None:
        if len(self.weights) != len(self.specs):
            raise ShapeError(f"{len(self.specs)} layers but {len(self.weights)} weight sets")
        for index, (spec, w) in enumerate(zip(self.specs, self.weights)):
            expected = spec.weight_shapes()
            actual = {k: v.shape for k, v in w.items()}
            if expected != actual:
                raise ShapeError(f"layer {index} ({spec.kind.value}) weights {actual} != {expected}")

    @classmethod
    def initialize(cls, specs: Sequence[LayerSpec], rng: np.random.Generator) -> "Network":
        """Kaiming-uniform weights, zero biases."""
        weights = []
        for spec in specs:
            shapes = spec.weight_shapes()
            if not shapes:
                weights.append({})
                continue
            fan_in = spec.in_channels * 9 if spec.kind is LayerKind.CONV3X3 else spec.fan_in
            bound = np.sqrt(6.0 / fan_in)
            weights.append({"W": rng.uniform(-bound, bound, size=shapes["W"]), "b": np.zeros(shapes["b"])})
        return cls(specs, weights)

    def copy(self) -> "Network":
        return Network(self.specs, [{k: v.copy() for k, v in w.items()} for w in self.weights])

    def parameter_count(self) -> int:
        return int(sum(v.size for w in self.weights for v in w.values()))

    def zero_grads(self) -> List[Weights]:
        return [{k: np.zeros_like(v) for k, v in w.items()} for w in self.weights]


def forward(net: Network, input: Tensor) -> Tuple[Tensor, ForwardCache]:
    x = np.asarray(input, dtype=float)
    check_finite(x, "network input")
    cache = ForwardCache(owner=id(net))
    for index, (spec, w) in enumerate(zip(net.specs, net.weights)):
        _check_input(spec, x, index)
        if spec.kind is LayerKind.CONV3X3:
            x, entry = _conv_forward(x, w)
        elif spec.kind is LayerKind.MAXPOOL2X2:
            x, entry = _pool_forward(x)
        elif spec.kind is LayerKind.RELU:
            entry = x
            x = np.maximum(x, 0.0)
        elif spec.kind is LayerKind.LINEAR:
            entry = x
            x = x.reshape(x.shape[0], -1) @ w["W"].T + w["b"]
        elif spec.kind is LayerKind.SIGMOID:
            x = _sigmoid(x)
            entry = x
        else:
            x = np.tanh(x)
            entry = x
        cache.entries.append(entry)
    check_finite(x, "network output")
    return x, cache


def backward(net: Network, cache: ForwardCache, upstream: Tensor) -> Tuple[Tensor, List[Weights]]:
    """Gradients of a scalar loss with respect to the input and every weight."""
    if cache.owner != id(net) or len(cache.entries) != len(net.specs):
        raise CacheError("cache does not come from a forward pass of this network")
    g = np.asarray(upstream, dtype=float)
    check_finite(g, "upstream gradient")
    grads: List[Weights] = [{} for _ in net.specs]
    for index in range(len(net.specs) - 1, -1, -1):
        spec, w, entry = net.specs[index], net.weights[index], cache.entries[index]
        if spec.kind is LayerKind.CONV3X3:
            g, grads[index] = _conv_backward(entry, w, g)
        elif spec.kind is LayerKind.MAXPOOL2X2:
            g = _pool_backward(entry, g)
        elif spec.kind is LayerKind.RELU:
            g = g * (entry > 0)
        elif spec.kind is LayerKind.LINEAR:
            flat = entry.reshape(entry.shape[0], -1)
            grads[index] = {"W": g.T @ flat, "b": g.sum(axis=0)}
            g = (g @ w["W"]).reshape(entry.shape)
        elif spec.kind is LayerKind.SIGMOID:
            g = g * entry * (1.0 - entry)
        else:
            g = g * (1.0 - entry ** 2)
    check_finite(g, "input gradient")
    return g, grads
