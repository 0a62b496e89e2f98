"""Layer descriptors with their forward and backward passes.

Convolution and fully connected weights are stored unrolled, as
``fan_in x out`` matrices, which is the layout the crossbars use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mapping import col2im, conv_output_size, im2col


class ShapeError(ValueError):
    pass


@dataclass
class Layer:
    name: str
    inputs: tuple[str, ...] | None = None

    weighted = False

    def output_shape(self, *in_shapes):
        return in_shapes[0]

    def param_shapes(self, *in_shapes) -> dict:
        return {}

    def buffer_shapes(self, *in_shapes) -> dict:
        return {}


@dataclass
class Conv2d(Layer):
    out_channels: int = 1
    kernel: int = 3
    stride: int = 1
    pad: int = 0
    bias: bool = True

    weighted = True

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"{self.name}: conv needs C x H x W input, got {shape}")
        c, h, w = shape
        ho = conv_output_size(h, self.kernel, self.stride, self.pad)
        wo = conv_output_size(w, self.kernel, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: kernel {self.kernel} does not fit {h}x{w}")
        return (self.out_channels, ho, wo)

    def fan_in(self, shape) -> int:
        return shape[0] * self.kernel * self.kernel

    def positions(self, shape) -> int:
        _, ho, wo = self.output_shape(shape)
        return ho * wo

    def param_shapes(self, shape):
        p = {"weight": (self.fan_in(shape), self.out_channels)}
        if self.bias:
            p["bias"] = (self.out_channels,)
        return p

    def forward(self, x, params, ctx):
        n, c, h, w = x.shape
        cols = im2col(x, self.kernel, self.stride, self.pad)
        z, used, weight = ctx.matmul(self, cols, params)
        if self.bias:
            z = z + params[self.name + ".bias"]
        _, ho, wo = self.output_shape((c, h, w))
        y = z.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (used, x.shape, weight)

    def backward(self, dy, cache, params, grads, need_dx=True):
        used, in_shape, weight = cache
        dz = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        grads[self.name + ".weight"] = used.T @ dz
        if self.bias:
            grads[self.name + ".bias"] = dz.sum(axis=0)
        if not need_dx:
            return [None]
        dcols = dz @ weight.T
        return [col2im(dcols, in_shape, self.kernel, self.stride, self.pad)]


@dataclass
class Linear(Layer):
    out_features: int = 10
    bias: bool = True

    weighted = True

    def output_shape(self, shape):
        return (self.out_features,)

    def fan_in(self, shape) -> int:
        return int(np.prod(shape))

    def positions(self, shape) -> int:
        return 1

    def param_shapes(self, shape):
        p = {"weight": (self.fan_in(shape), self.out_features)}
        if self.bias:
            p["bias"] = (self.out_features,)
        return p

    def forward(self, x, params, ctx):
        flat = x.reshape(x.shape[0], -1)
        z, used, weight = ctx.matmul(self, flat, params)
        if self.bias:
            z = z + params[self.name + ".bias"]
        return z, (used, x.shape, weight)

    def backward(self, dy, cache, params, grads, need_dx=True):
        used, in_shape, weight = cache
        grads[self.name + ".weight"] = used.T @ dy
        if self.bias:
            grads[self.name + ".bias"] = dy.sum(axis=0)
        if not need_dx:
            return [None]
        return [(dy @ weight.T).reshape(in_shape)]


@dataclass
class ReLU(Layer):
    def forward(self, x, params, ctx):
        return np.maximum(x, 0), x > 0

    def backward(self, dy, mask, params, grads, need_dx=True):
        return [dy * mask]


def _pool_windows(x, size, stride):
    n, c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo], ho, wo


@dataclass
class MaxPool(Layer):
    size: int = 2
    stride: int | None = None

    @property
    def step(self):
        return self.stride or self.size

    def output_shape(self, shape):
        c, h, w = shape
        ho, wo = (h - self.size) // self.step + 1, (w - self.size) // self.step + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: pool {self.size} does not fit {h}x{w}")
        return (c, ho, wo)

    def forward(self, x, params, ctx):
        win, ho, wo = _pool_windows(x, self.size, self.step)
        flat = win.reshape(*win.shape[:4], -1)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, (arg, x.shape, ho, wo)

    def backward(self, dy, cache, params, grads, need_dx=True):
        arg, shape, ho, wo = cache
        dx = np.zeros(shape, dtype=dy.dtype)
        s = self.step
        for i in range(self.size):
            for j in range(self.size):
                hit = arg == i * self.size + j
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dy * hit
        return [dx]


@dataclass
class AvgPool(Layer):
    size: int = 2
    stride: int | None = None

    @property
    def step(self):
        return self.stride or self.size

    output_shape = MaxPool.output_shape

    def forward(self, x, params, ctx):
        win, ho, wo = _pool_windows(x, self.size, self.step)
        return win.mean(axis=(-1, -2)), (x.shape, ho, wo)

    def backward(self, dy, cache, params, grads, need_dx=True):
        shape, ho, wo = cache
        dx = np.zeros(shape, dtype=dy.dtype)
        s = self.step
        share = dy / (self.size * self.size)
        for i in range(self.size):
            for j in range(self.size):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += share
        return [dx]


@dataclass
class GlobalAvgPool(Layer):
    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, params, ctx):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, shape, params, grads, need_dx=True):
        n, c, h, w = shape
        return [np.broadcast_to((dy / (h * w))[:, :, None, None], shape).copy()]


@dataclass
class BatchNorm(Layer):
    eps: float = 1e-5
    momentum: float = 0.1

    def param_shapes(self, shape):
        return {"gamma": (shape[0],), "beta": (shape[0],)}

    def buffer_shapes(self, shape):
        return {"mean": (shape[0],), "var": (shape[0],)}

    @staticmethod
    def _axes(x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    @staticmethod
    def _bcast(v, x):
        return v[None, :, None, None] if x.ndim == 4 else v[None, :]

    def forward(self, x, params, ctx):
        gamma, beta = params[self.name + ".gamma"], params[self.name + ".beta"]
        axes = self._axes(x)
        if ctx.training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // x.shape[1]
            rm, rv = ctx.buffers[self.name + ".mean"], ctx.buffers[self.name + ".var"]
            rm *= 1 - self.momentum
            rm += self.momentum * mean
            rv *= 1 - self.momentum
            rv += self.momentum * var * m / max(m - 1, 1)
        else:
            mean, var = ctx.buffers[self.name + ".mean"], ctx.buffers[self.name + ".var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv, x)
        y = xhat * self._bcast(gamma, x) + self._bcast(beta, x)
        return y.astype(x.dtype, copy=False), (xhat, inv, ctx.training)

    def backward(self, dy, cache, params, grads, need_dx=True):
        xhat, inv, training = cache
        axes = self._axes(dy)
        gamma = params[self.name + ".gamma"]
        grads[self.name + ".gamma"] = (dy * xhat).sum(axis=axes)
        grads[self.name + ".beta"] = dy.sum(axis=axes)
        dxhat = dy * self._bcast(gamma, dy)
        if not training:
            return [dxhat * self._bcast(inv, dy)]
        m = dy.size // dy.shape[1]
        dx = (self._bcast(inv, dy) / m) * (
            m * dxhat
            - self._bcast(dxhat.sum(axis=axes), dy)
            - xhat * self._bcast((dxhat * xhat).sum(axis=axes), dy))
        return [dx]


@dataclass
class Add(Layer):
    def output_shape(self, *shapes):
        if len(shapes) != 2 or shapes[0] != shapes[1]:
            raise ShapeError(f"{self.name}: residual add needs two equal shapes, got {shapes}")
        return shapes[0]

    def forward(self, a, b, params=None, ctx=None):
        return a + b, None

    def backward(self, dy, cache, params, grads, need_dx=True):
        return [dy, dy]


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Accepts one sample (``logits`` of shape ``(classes,)``, integer label) or
    a batch.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    classes = z.shape[1]
    if y.shape[0] != z.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {z.shape[0]} samples")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise LabelOutOfRange(f"labels must lie in [0, {classes})")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = z.shape[0]
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    if single:
        grad = grad[0]
    return float(loss), grad.astype(logits.dtype, copy=False)


class LabelOutOfRange(ValueError):
    pass
