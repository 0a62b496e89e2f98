"""Layer graphs, parameter initialisation and full-precision forward/backward."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import (Add, AvgPool, BatchNorm, Conv2d, GlobalAvgPool, Layer, Linear,
                     MaxPool, ReLU, ShapeError)

INPUT = "input"


@dataclass
class ModelSpec:
    """An ordered list of layers forming a DAG.

    A layer reads the previous layer's output unless ``inputs`` names other
    layers (or ``"input"``). The last layer produces the logits.
    """

    input_shape: tuple[int, int, int]
    layers: list[Layer]
    name: str = "model"

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ShapeError("layer names must be unique")
        if INPUT in names:
            raise ShapeError(f"{INPUT!r} is reserved")
        self._shapes = None

    def sources(self, idx: int) -> tuple[str, ...]:
        layer = self.layers[idx]
        if layer.inputs:
            return tuple(layer.inputs)
        return (self.layers[idx - 1].name,) if idx else (INPUT,)

    def shapes(self) -> dict[str, tuple]:
        """Output shape (without batch axis) of every node."""
        if self._shapes is None:
            shapes = {INPUT: self.input_shape}
            for i, layer in enumerate(self.layers):
                srcs = self.sources(i)
                for s in srcs:
                    if s not in shapes:
                        raise ShapeError(f"{layer.name}: unknown or later input {s!r}")
                shapes[layer.name] = tuple(layer.output_shape(*(shapes[s] for s in srcs)))
            self._shapes = shapes
        return self._shapes

    def in_shape(self, layer: Layer) -> tuple:
        i = self.layers.index(layer)
        return self.shapes()[self.sources(i)[0]]

    @property
    def num_classes(self) -> int:
        out = self.shapes()[self.layers[-1].name]
        if len(out) != 1:
            raise ShapeError(f"model output must be a vector, got {out}")
        return out[0]

    def weighted_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.weighted]

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def param_shapes(self) -> dict[str, tuple]:
        shapes = self.shapes()
        out = {}
        for i, layer in enumerate(self.layers):
            ins = [shapes[s] for s in self.sources(i)]
            for k, v in layer.param_shapes(*ins).items():
                out[f"{layer.name}.{k}"] = tuple(v)
        return out

    def buffer_shapes(self) -> dict[str, tuple]:
        shapes = self.shapes()
        out = {}
        for i, layer in enumerate(self.layers):
            ins = [shapes[s] for s in self.sources(i)]
            for k, v in layer.buffer_shapes(*ins).items():
                out[f"{layer.name}.{k}"] = tuple(v)
        return out

    def n_weights(self) -> int:
        """Number of crossbar-mapped weights (conv and fc matrices, no biases)."""
        return sum(int(np.prod(s)) for k, s in self.param_shapes().items() if k.endswith(".weight"))


def init_params(model: ModelSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Kaiming-uniform weights (``bound = sqrt(6 / fan_in)``), zero biases, unit BN scale."""
    params = {}
    for name, shape in model.param_shapes().items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            bound = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif kind == "gamma":
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return params


def init_buffers(model: ModelSpec) -> dict[str, np.ndarray]:
    return {name: (np.ones(shape, np.float32) if name.endswith(".var") else np.zeros(shape, np.float32))
            for name, shape in model.buffer_shapes().items()}


@dataclass
class Context:
    """Per-pass options.

    ``linear(layer, x2d, weight)`` replaces the matrix product of weighted
    layers and returns ``(z, x_used)``; the backward pass then uses ``x_used``
    for the weight gradient. ``weights`` overrides the matrices seen by the
    backward pass (and by the digital forward). ``fake_quant(name, w)``
    quantizes weights on the digital forward.
    """

    training: bool = False
    buffers: dict = field(default_factory=dict)
    linear: Callable | None = None
    weights: dict = field(default_factory=dict)
    fake_quant: Callable | None = None

    def matmul(self, layer: Layer, x2d: np.ndarray, params: dict):
        w = self.weights.get(layer.name)
        if w is None:
            w = params[layer.name + ".weight"]
        if self.linear is not None:
            z, used = self.linear(layer, x2d, w)
            dt = x2d.dtype
            return np.asarray(z, dtype=dt), np.asarray(used, dtype=dt), w
        if self.fake_quant is not None:
            w = self.fake_quant(layer.name, w)
        return x2d @ w, x2d, w


def _check_input(model: ModelSpec, x):
    x = np.asarray(x)
    if x.dtype != np.float64:
        x = x.astype(np.float32)
    single = x.ndim == len(model.input_shape)
    if single:
        x = x[None]
    if tuple(x.shape[1:]) != model.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    return x, single


def forward_ref(model: ModelSpec, params: dict, x, ctx: Context | None = None):
    """Forward pass. Returns ``(logits, cache)``; a single sample gives ``(classes,)`` logits."""
    ctx = ctx or Context(buffers=init_buffers(model))
    x, single = _check_input(model, x)
    values = {INPUT: x}
    caches = {}
    for i, layer in enumerate(model.layers):
        ins = [values[s] for s in model.sources(i)]
        if isinstance(layer, Add):
            y, c = layer.forward(*ins)
        else:
            y, c = layer.forward(ins[0], params, ctx)
        values[layer.name] = y
        caches[layer.name] = c
    logits = values[model.layers[-1].name]
    cache = {"layers": caches, "single": single, "input_shape": x.shape}
    return (logits[0] if single else logits), cache


def backward_ref(model: ModelSpec, params: dict, cache: dict, dlogits, input_grad: bool = True):
    """Reverse pass; returns gradients keyed by parameter name plus ``"input"``."""
    dl = np.asarray(dlogits)
    if dl.dtype != np.float64:
        dl = dl.astype(np.float32)
    if cache["single"]:
        dl = dl[None]
    out_shape = (cache["input_shape"][0],) + model.shapes()[model.layers[-1].name]
    if dl.shape != out_shape:
        raise ShapeError(f"upstream gradient {dl.shape} != logits {out_shape}")
    grads: dict[str, np.ndarray] = {}
    pending = {model.layers[-1].name: dl}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        dy = pending.pop(layer.name, None)
        srcs = model.sources(i)
        if dy is None:
            continue
        need_dx = input_grad or srcs != (INPUT,)
        dxs = layer.backward(dy, cache["layers"][layer.name], params, grads, need_dx=need_dx)
        for s, dx in zip(srcs, dxs):
            if dx is None:
                continue
            pending[s] = pending[s] + dx if s in pending else dx
    for name, shape in model.param_shapes().items():
        if name not in grads:
            grads[name] = np.zeros(shape, dtype=np.float32)
    if input_grad:
        dx = pending.get(INPUT, np.zeros(cache["input_shape"], dtype=np.float32))
        grads[INPUT] = dx[0] if cache["single"] else dx
    return grads


def lenet() -> ModelSpec:
    """MNIST LeNet: two convolutions and one fully connected layer."""
    return ModelSpec((1, 28, 28), [
        Conv2d("conv1", out_channels=8, kernel=5),
        ReLU("relu1"),
        MaxPool("pool1", size=3),
        Conv2d("conv2", out_channels=18, kernel=3, pad=1),
        ReLU("relu2"),
        MaxPool("pool2", size=3, stride=2),
        Linear("fc", out_features=10),
    ], name="lenet")


def vgg8(num_classes: int = 10) -> ModelSpec:
    """CIFAR-10 VGG-8: six 3x3 convolutions in three pooled stages, two fc layers."""
    layers: list[Layer] = []
    widths = [32, 32, 64, 64, 128, 128]
    for i, w in enumerate(widths, start=1):
        layers += [Conv2d(f"conv{i}", out_channels=w, kernel=3, pad=1),
                   BatchNorm(f"bn{i}"), ReLU(f"relu{i}")]
        if i % 2 == 0:
            layers.append(MaxPool(f"pool{i // 2}", size=2))
    layers += [Linear("fc1", out_features=128), BatchNorm("bn_fc1"), ReLU("relu_fc1"),
               Linear("fc2", out_features=num_classes)]
    return ModelSpec((3, 32, 32), layers, name="vgg8")


def _basic_block(prefix: str, src: str, width: int, stride: int, project: bool) -> list[Layer]:
    layers: list[Layer] = [
        Conv2d(f"{prefix}.conv1", inputs=(src,), out_channels=width, kernel=3, stride=stride,
               pad=1, bias=False),
        BatchNorm(f"{prefix}.bn1"), ReLU(f"{prefix}.relu1"),
        Conv2d(f"{prefix}.conv2", out_channels=width, kernel=3, pad=1, bias=False),
        BatchNorm(f"{prefix}.bn2"),
    ]
    skip = src
    if project:
        layers += [Conv2d(f"{prefix}.shortcut", inputs=(src,), out_channels=width, kernel=1,
                          stride=stride, bias=False),
                   BatchNorm(f"{prefix}.shortcut_bn")]
        skip = f"{prefix}.shortcut_bn"
    layers += [Add(f"{prefix}.add", inputs=(f"{prefix}.bn2", skip)), ReLU(f"{prefix}.out")]
    return layers


def resnet18(num_classes: int = 10) -> ModelSpec:
    """CIFAR-10 ResNet-18 with 1x1 projection shortcuts."""
    layers: list[Layer] = [Conv2d("conv1", out_channels=64, kernel=3, pad=1, bias=False),
                           BatchNorm("bn1"), ReLU("relu1")]
    src, in_w = "relu1", 64
    for stage, width in enumerate([64, 128, 256, 512], start=1):
        for b in range(2):
            stride = 2 if (b == 0 and stage > 1) else 1
            prefix = f"layer{stage}.{b}"
            layers += _basic_block(prefix, src, width, stride, project=(stride != 1 or in_w != width))
            src, in_w = f"{prefix}.out", width
    layers += [GlobalAvgPool("avgpool", inputs=(src,)), Linear("fc", out_features=num_classes)]
    return ModelSpec((3, 32, 32), layers, name="resnet18")


PRESETS = {"lenet": lenet, "vgg8": vgg8, "resnet18": resnet18}


def build_model(name: str) -> ModelSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(PRESETS)}") from None


__all__ = ["AvgPool", "Context", "INPUT", "ModelSpec", "PRESETS", "backward_ref", "build_model",
           "forward_ref", "init_buffers", "init_params", "lenet", "resnet18", "vgg8"]
