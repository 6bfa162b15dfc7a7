"""Minimal from-scratch layers with exact reverse-mode gradients.

Every layer caches what its backward pass needs during a train-mode forward
(the trace); calling backward without one is an error. Arrays are plain
numpy, float64 in tests and float32 in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, TrainingError


@dataclass
class Context:
    """Forward-pass mode: training enables traces and dropout draws."""

    train: bool = False
    rng: np.random.Generator | None = None


class Layer:
    """Base: parameter-free identity semantics for params/grads."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def _trace(self, name="cache"):
        value = getattr(self, name, None)
        if value is None:
            raise TrainingError(
                f"{type(self).__name__}.backward called without a train-mode forward"
            )
        return value


def _init(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Layer):
    """3x3 (or 1x1) convolution with zero padding, stride 1 or 2."""

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=1, *, rng, std=0.02, dtype=np.float64):
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.W = _init(rng, (c_out, c_in, kernel, kernel), std, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.cache = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, ctx: Context):
        k, s, p = self.kernel, self.stride, self.padding
        bsz, _, h, w = x.shape
        ho, wo = self.out_hw(h, w)
        if ho < 1 or wo < 1:
            raise DimensionError("convolution input smaller than kernel")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        y = np.zeros((bsz, self.W.shape[0], ho, wo), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                patch = xp[:, :, di : di + s * ho : s, dj : dj + s * wo : s]
                y += np.einsum("oc,bcij->boij", self.W[:, :, di, dj], patch, optimize=True)
        y += self.b[None, :, None, None]
        if ctx.train:
            self.cache = (xp, x.shape)
        return y

    def backward(self, dout):
        xp, x_shape = self._trace()
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = dout.shape[2], dout.shape[3]
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                patch = xp[:, :, di : di + s * ho : s, dj : dj + s * wo : s]
                self.dW[:, :, di, dj] = np.einsum("boij,bcij->oc", dout, patch, optimize=True)
                dxp[:, :, di : di + s * ho : s, dj : dj + s * wo : s] += np.einsum(
                    "boij,oc->bcij", dout, self.W[:, :, di, dj], optimize=True
                )
        self.db[...] = dout.sum(axis=(0, 2, 3))
        self.cache = None
        if p:
            return dxp[:, :, p:-p, p:-p]
        return dxp.reshape(x_shape)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, height, width)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.momentum, self.eps = momentum, eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, ctx: Context):
        axes = (0, 2, 3)
        if ctx.train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        if ctx.train:
            self.cache = (xhat, inv_std, x.shape)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dout):
        xhat, inv_std, x_shape = self._trace()
        m = x_shape[0] * x_shape[2] * x_shape[3]
        axes = (0, 2, 3)
        self.dgamma[...] = (dout * xhat).sum(axis=axes)
        self.dbeta[...] = dout.sum(axis=axes)
        dxhat = dout * self.gamma[None, :, None, None]
        # Batch statistics depend on x, so project out the mean and the
        # component along xhat before rescaling.
        term = (
            dxhat
            - dxhat.mean(axis=axes)[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=axes)[None, :, None, None] / m
        )
        self.cache = None
        return term * inv_std[None, :, None, None]


class ReLU(Layer):
    def __init__(self):
        self.cache = None

    def forward(self, x, ctx: Context):
        if ctx.train:
            self.cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout):
        mask = self._trace()
        self.cache = None
        return dout * mask


class Dropout(Layer):
    """Inverted dropout; identity in eval mode or at rate 0."""

    def __init__(self, rate):
        self.rate = rate
        self.cache = None

    def forward(self, x, ctx: Context):
        if not ctx.train:
            return x
        if self.rate == 0.0:
            self.cache = 1.0
            return x
        if ctx.rng is None:
            raise TrainingError("train-mode dropout requires Context.rng")
        mask = (ctx.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        self.cache = mask
        return x * mask

    def backward(self, dout):
        mask = self._trace()
        self.cache = None
        return dout * mask


class AdaptiveAvgPool2d(Layer):
    """Average pooling onto a fixed output grid with floor/ceil bin edges."""

    def __init__(self, out_h, out_w):
        self.out_h, self.out_w = out_h, out_w
        self.cache = None

    @staticmethod
    def _bins(size, out):
        return [
            (int(np.floor(i * size / out)), int(np.ceil((i + 1) * size / out)))
            for i in range(out)
        ]

    def forward(self, x, ctx: Context):
        _, _, h, w = x.shape
        if h < self.out_h or w < self.out_w:
            raise DimensionError(
                f"pooling input {h}x{w} smaller than grid {self.out_h}x{self.out_w}"
            )
        hb, wb = self._bins(h, self.out_h), self._bins(w, self.out_w)
        y = np.empty(x.shape[:2] + (self.out_h, self.out_w), dtype=x.dtype)
        for i, (hs, he) in enumerate(hb):
            for j, (ws, we) in enumerate(wb):
                y[:, :, i, j] = x[:, :, hs:he, ws:we].mean(axis=(2, 3))
        if ctx.train:
            self.cache = (x.shape, hb, wb)
        return y

    def backward(self, dout):
        x_shape, hb, wb = self._trace()
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for i, (hs, he) in enumerate(hb):
            for j, (ws, we) in enumerate(wb):
                area = (he - hs) * (we - ws)
                dx[:, :, hs:he, ws:we] += dout[:, :, i : i + 1, j : j + 1] / area
        self.cache = None
        return dx


class Linear(Layer):
    """y = x W + b on the last axis; leading axes are flattened internally."""

    def __init__(self, d_in, d_out, *, rng, std=0.02, dtype=np.float64):
        self.W = _init(rng, (d_in, d_out), std, dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.cache = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def forward(self, x, ctx: Context):
        if ctx.train:
            self.cache = x
        return x @ self.W + self.b

    def backward(self, dout):
        x = self._trace()
        x2 = x.reshape(-1, x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.dW[...] = x2.T @ d2
        self.db[...] = d2.sum(axis=0)
        self.cache = None
        return dout @ self.W.T


class LayerNorm(Layer):
    """Normalization over the last axis with learnable scale and shift."""

    def __init__(self, dim, eps=1e-5, dtype=np.float64):
        self.eps = eps
        self.gamma = np.ones(dim, dtype=dtype)
        self.beta = np.zeros(dim, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def forward(self, x, ctx: Context):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        if ctx.train:
            self.cache = (xhat, inv_std)
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        xhat, inv_std = self._trace()
        d = xhat.shape[-1]
        self.dgamma[...] = (dout * xhat).reshape(-1, d).sum(axis=0)
        self.dbeta[...] = dout.reshape(-1, d).sum(axis=0)
        dxhat = dout * self.gamma
        term = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        self.cache = None
        return term * inv_std
