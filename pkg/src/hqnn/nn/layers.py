"""Layers with explicit forward and reverse-mode rules.

Every layer keeps its trainable arrays in ``params`` and, after
``backward``, the matching gradients in ``grads`` (same keys, same shapes).
``forward`` caches whatever ``backward`` needs, so calls must alternate.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import DegenerateBatchError, ShapeError
from ..grad import Engine, Wrt, circuit_vjp
from ..pqc import (QuantumLayerShape, extract_patches, parallel_circuit_spec, quanv_kernel_spec,
                   quanv_output_size, run_circuit, split_chunks)


class Layer:
    needs_input_grad = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Optional[np.ndarray]:
        raise NotImplementedError

    def __call__(self, x, training: bool = True):
        return self.forward(x, training)

    def describe(self) -> str:
        return type(self).__name__


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Cross-correlation with square kernels, implemented as im2col + matmul."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = he_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        if bias:
            self.params["bias"] = np.zeros(out_channels)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        hp, wp = h + 2 * self.padding, w + 2 * self.padding
        if hp < self.kernel or wp < self.kernel:
            raise ShapeError(f"{self.kernel}x{self.kernel} kernel does not fit padded {hp}x{wp} input")
        return (hp - self.kernel) // self.stride + 1, (wp - self.kernel) // self.stride + 1

    def forward(self, x, training=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv expects N x {self.in_channels} x H x W, got {x.shape}")
        n, c, h, w = x.shape
        oh, ow = self.output_size(h, w)
        p, k, s = self.padding, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, : (oh - 1) * s + 1: s, : (ow - 1) * s + 1: s]  # n c oh ow k k
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = cols @ wmat.T
        if "bias" in self.params:
            out += self.params["bias"]
        self._cache = (x.shape, cols, oh, ow)
        return out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        (n, c, h, w), cols, oh, ow = self._cache
        p, k, s = self.padding, self.kernel, self.stride
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.grads["weight"] = (g.T @ cols).reshape(self.params["weight"].shape)
        if "bias" in self.params:
            self.grads["bias"] = g.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcols = (g @ self.params["weight"].reshape(self.out_channels, -1)).reshape(n, oh, ow, c, k, k)
        dcols = np.ascontiguousarray(dcols.transpose(4, 5, 0, 3, 1, 2))  # k k n c oh ow
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i: i + s * (oh - 1) + 1: s, j: j + s * (ow - 1) + 1: s] += dcols[i, j]
        return dxp[:, :, p: p + h, p: p + w] if p else dxp

    def describe(self):
        return (f"Conv2d({self.in_channels}->{self.out_channels}, {self.kernel}x{self.kernel}, "
                f"stride {self.stride}, pad {self.padding}{'' if 'bias' in self.params else ', no bias'})")


class MaxPool2d(Layer):
    def __init__(self, kernel: int = 2):
        super().__init__()
        self.kernel = kernel

    def forward(self, x, training=True):
        n, c, h, w = x.shape
        k = self.kernel
        if h % k or w % k:
            raise ShapeError(f"max-pool {k} needs spatial dims divisible by {k}, got {h}x{w}")
        blocks = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        (n, c, h, w), idx = self._cache
        k = self.kernel
        blocks = np.zeros((n, c, h // k, w // k, k * k))
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        return blocks.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)

    def describe(self):
        return f"MaxPool2d({self.kernel})"


class BatchNorm(Layer):
    """Per-channel batch normalization for (N, C) or (N, C, H, W) inputs."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def _axes(self, x):
        if x.ndim not in (2, 4) or x.shape[1] != self.channels:
            raise ShapeError(f"batch norm over {self.channels} channels got {x.shape}")
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bshape(self, x):
        return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)

    def forward(self, x, training=True):
        axes, bs = self._axes(x), self._bshape(x)
        gamma, beta = self.params["gamma"].reshape(bs), self.params["beta"].reshape(bs)
        if not training:
            mean = self.buffers["running_mean"].reshape(bs)
            var = self.buffers["running_var"].reshape(bs)
            return gamma * (x - mean) / np.sqrt(var + self.eps) + beta
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch norm needs at least 2 samples in training mode")
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = x.size // self.channels
        self.buffers["running_mean"] = (1 - self.momentum) * self.buffers["running_mean"] + self.momentum * mean.ravel()
        self.buffers["running_var"] = ((1 - self.momentum) * self.buffers["running_var"]
                                       + self.momentum * var.ravel() * m / (m - 1))
        self._cache = (xhat, inv_std, axes, bs)
        return gamma * xhat + beta

    def backward(self, grad):
        xhat, inv_std, axes, bs = self._cache
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self.params["gamma"].reshape(bs)
        return inv_std * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                          - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))

    def describe(self):
        return f"BatchNorm({self.channels})"


class ReLU(Layer):
    def forward(self, x, training=True):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class Flatten(Layer):
    def forward(self, x, training=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    """y = x W^T + b with W of shape (out, in)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = he_uniform(rng, (out_features, in_features), in_features)
        if bias:
            self.params["bias"] = np.zeros(out_features)

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense layer expects N x {self.in_features}, got {x.shape}")
        self._x = x
        out = x @ self.params["weight"].T
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out

    def backward(self, grad):
        self.grads["weight"] = grad.T @ self._x
        if "bias" in self.params:
            self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]

    def describe(self):
        return f"Dense({self.in_features}->{self.out_features})"


class ParallelQuantumDense(Layer):
    """``c`` independent ``q``-qubit circuits over consecutive feature chunks."""

    quantum_param_name = "theta"

    def __init__(self, shape: QuantumLayerShape, engine=Engine.ADJOINT,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.shape = shape
        self.engine = Engine(engine)
        self.spec = parallel_circuit_spec(shape.q, shape.i)
        self.params["theta"] = rng.uniform(0.0, 2 * np.pi, size=(shape.c, shape.i, shape.q, 3))

    def _theta(self):
        return self.params["theta"].reshape(self.shape.c, self.shape.params_per_circuit)

    def forward(self, x, training=True):
        if x.ndim != 2 or x.shape[1] != self.shape.n:
            raise ShapeError(f"quantum layer expects N x {self.shape.n}, got {x.shape}")
        self._chunks = split_chunks(x, self.shape.q)
        out = run_circuit(self.spec, self._chunks, self._theta())
        return out.reshape(x.shape[0], self.shape.n)

    def backward(self, grad):
        g = split_chunks(grad, self.shape.q)
        wrt = Wrt.BOTH if self.needs_input_grad else Wrt.PARAMS
        dx, dt = circuit_vjp(self.spec, self._chunks, self._theta(), g, self.engine, wrt)
        self.grads["theta"] = dt.sum(axis=0).reshape(self.params["theta"].shape)
        return None if dx is None else dx.reshape(grad.shape)

    def describe(self):
        s = self.shape
        return f"ParallelQuantumDense(q={s.q}, i={s.i}, c={s.c}, engine={self.engine.value})"


class Quanv2d(Layer):
    """2x2 quantum kernel slid over a single-channel image; 4 output channels."""

    quantum_param_name = "theta"

    def __init__(self, stride: int = 4, engine=Engine.ADJOINT, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.stride = stride
        self.engine = Engine(engine)
        self.spec = quanv_kernel_spec()
        self.params["theta"] = rng.uniform(0.0, 2 * np.pi, size=self.spec.num_params)

    def forward(self, x, training=True):
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"quanvolution expects N x 1 x H x W, got {x.shape}")
        self._in_shape = x.shape
        self._patches = extract_patches(x[:, 0], self.stride)
        out = run_circuit(self.spec, self._patches, self.params["theta"])
        return np.moveaxis(out, -1, 1)

    def backward(self, grad):
        g = np.moveaxis(grad, 1, -1)
        wrt = Wrt.BOTH if self.needs_input_grad else Wrt.PARAMS
        dp, dt = circuit_vjp(self.spec, self._patches, self.params["theta"], g, self.engine, wrt)
        self.grads["theta"] = dt.reshape(-1, dt.shape[-1]).sum(axis=0)
        if dp is None:
            return None
        n, _, h, w = self._in_shape
        oh, ow = quanv_output_size(h, w, self.stride)
        s = self.stride
        dx = np.zeros((n, h, w))
        dp = dp.reshape(n, oh, ow, 2, 2)
        for i in range(2):
            for j in range(2):
                dx[:, i: i + s * (oh - 1) + 1: s, j: j + s * (ow - 1) + 1: s] += dp[..., i, j]
        return dx[:, None]

    def describe(self):
        return f"Quanv2d(2x2, stride {self.stride}, engine={self.engine.value})"
