"""Network layers with explicit forward and backward passes on numpy arrays.

Contract shared by every layer: ``forward(x, mode)`` returns the output and
an opaque cache; ``backward(cache, grad_out)`` returns the input gradient and
one gradient array per entry of ``params``. Parameters are plain arrays
updated in place by the optimizer; ``buffers`` hold non-learnable state
(batch-norm running statistics).
"""

from __future__ import annotations

import math

import numpy as np


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    """Uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], the dense/conv default."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype, copy=False)


class Layer:
    def __init__(self):
        self.params: list[np.ndarray] = []
        self.param_names: list[str] = []
        self.buffers: list[np.ndarray] = []
        self.buffer_names: list[str] = []

    def forward(self, x, mode):
        raise NotImplementedError

    def backward(self, cache, grad_out):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float64):
        super().__init__()
        self.weight = uniform_fan_in(rng, in_dim, (in_dim, out_dim), dtype)
        self.bias = uniform_fan_in(rng, in_dim, (out_dim,), dtype)
        self.params = [self.weight, self.bias]
        self.param_names = ["weight", "bias"]

    def forward(self, x, mode):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ValueError(f"dense layer expects (N, {self.weight.shape[0]}), got {x.shape}")
        return x @ self.weight + self.bias, x

    def backward(self, cache, grad_out):
        x = cache
        return grad_out @ self.weight.T, [x.T @ grad_out, grad_out.sum(axis=0)]


class ReLU(Layer):
    def forward(self, x, mode):
        return np.maximum(x, 0), x > 0

    def backward(self, cache, grad_out):
        return grad_out * cache, []


class Flatten(Layer):
    def forward(self, x, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad_out):
        return grad_out.reshape(cache), []


def _conv_indices(channels, height, width, kh, kw, padding, stride):
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    i0 = np.tile(np.repeat(np.arange(kh), kw), channels)
    j0 = np.tile(np.arange(kw), kh * channels)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    i = i0[:, None] + i1[None, :]  # (C*kh*kw, out_h*out_w)
    j = j0[:, None] + j1[None, :]
    ch = np.repeat(np.arange(channels), kh * kw)[:, None]
    return ch, i, j, out_h, out_w


class Conv2d(Layer):
    """im2col convolution; kernel, stride, and padding are per-instance fixed."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, dtype=np.float64, bias=True):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = uniform_fan_in(rng, fan_in, (out_ch, in_ch, kernel, kernel), dtype)
        self.params = [self.weight]
        self.param_names = ["weight"]
        if bias:
            self.bias = uniform_fan_in(rng, fan_in, (out_ch,), dtype)
            self.params.append(self.bias)
            self.param_names.append("bias")
        else:
            self.bias = None

    def forward(self, x, mode):
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} input channels, got {c}")
        ch, i, j, out_h, out_w = _conv_indices(c, h, w, self.kernel, self.kernel,
                                               self.padding, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding,) * 2, (self.padding,) * 2)) \
            if self.padding else x
        cols = xp[:, ch, i, j]  # (N, C*k*k, L)
        w2 = self.weight.reshape(self.out_ch, -1)
        out = np.matmul(w2, cols).reshape(n, self.out_ch, out_h, out_w)
        if self.bias is not None:
            out += self.bias[None, :, None, None]
        return out, (x.shape, cols)

    def backward(self, cache, grad_out):
        x_shape, cols = cache
        n, c, h, w = x_shape
        ch, i, j, out_h, out_w = _conv_indices(c, h, w, self.kernel, self.kernel,
                                               self.padding, self.stride)
        gflat = grad_out.reshape(n, self.out_ch, -1)
        w2 = self.weight.reshape(self.out_ch, -1)

        grad_w = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(self.weight.shape)
        grads = [grad_w]
        if self.bias is not None:
            grads.append(grad_out.sum(axis=(0, 2, 3)))

        dcols = np.matmul(w2.T, gflat)  # (N, C*k*k, L)
        hp, wp = h + 2 * self.padding, w + 2 * self.padding
        flat = (ch * hp + i) * wp + j  # (C*k*k, L), identical for every sample
        offsets = np.arange(n) * (c * hp * wp)
        scatter = (offsets[:, None, None] + flat[None]).ravel()
        gx_pad = np.bincount(scatter, weights=dcols.ravel(), minlength=n * c * hp * wp)
        gx_pad = gx_pad.reshape(n, c, hp, wp).astype(grad_out.dtype, copy=False)
        p = self.padding
        gx = gx_pad[:, :, p:hp - p, p:wp - p] if p else gx_pad
        return gx, grads


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics and refreshes the running
    estimates; eval mode uses the running estimates only.
    """

    def __init__(self, channels, dtype=np.float64, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.scale = np.ones(channels, dtype=dtype)
        self.shift = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.params = [self.scale, self.shift]
        self.param_names = ["scale", "shift"]
        self.buffers = [self.running_mean, self.running_var]
        self.buffer_names = ["running_mean", "running_var"]

    def forward(self, x, mode):
        if mode == "train":
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (m / (m - 1)) if m > 1 else var
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mean
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = self.scale[None, :, None, None] * xhat + self.shift[None, :, None, None]
        return y, (xhat, inv_std, mode)

    def backward(self, cache, grad_out):
        xhat, inv_std, mode = cache
        grad_scale = (grad_out * xhat).sum(axis=(0, 2, 3))
        grad_shift = grad_out.sum(axis=(0, 2, 3))
        g = grad_out * self.scale[None, :, None, None]
        if mode == "train":
            m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
            sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (inv_std[None, :, None, None] / m) * (m * g - sum_g - xhat * sum_gx)
        else:
            gx = g * inv_std[None, :, None, None]
        return gx, [grad_scale, grad_shift]


class MaxPool2d(Layer):
    """Non-overlapping max pooling with stride equal to the pool size."""

    def __init__(self, pool):
        super().__init__()
        self.pool = pool

    def forward(self, x, mode):
        n, c, h, w = x.shape
        p = self.pool
        if h % p or w % p:
            raise ValueError(f"spatial size {h}x{w} not divisible by pool {p}")
        windows = (x.reshape(n, c, h // p, p, w // p, p)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, h // p, w // p, p * p))
        argmax = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
        return y, (argmax, x.shape)

    def backward(self, cache, grad_out):
        argmax, x_shape = cache
        n, c, h, w = x_shape
        p = self.pool
        g5 = np.zeros((n, c, h // p, w // p, p * p), dtype=grad_out.dtype)
        np.put_along_axis(g5, argmax[..., None], grad_out[..., None], axis=-1)
        gx = (g5.reshape(n, c, h // p, w // p, p, p)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w))
        return gx, []


class GlobalAvgPool(Layer):
    """Mean over the spatial map; output is already flat (N, C)."""

    def forward(self, x, mode):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, grad_out):
        n, c, h, w = cache
        gx = np.empty(cache, dtype=grad_out.dtype)
        gx[...] = grad_out[:, :, None, None] / (h * w)
        return gx, []


class ResidualBlock(Layer):
    """Two 3x3 conv+batch-norm steps with a shortcut add and final ReLU.

    A 1x1 projection (conv + batch-norm) carries the shortcut whenever the
    stride or channel count changes.
    """

    def __init__(self, in_ch, out_ch, stride, rng, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, rng, dtype, bias=False)
        self.bn1 = BatchNorm2d(out_ch, dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, rng, dtype, bias=False)
        self.bn2 = BatchNorm2d(out_ch, dtype)
        self.projection = stride != 1 or in_ch != out_ch
        sub = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.projection:
            self.conv_sc = Conv2d(in_ch, out_ch, 1, stride, 0, rng, dtype, bias=False)
            self.bn_sc = BatchNorm2d(out_ch, dtype)
            sub += [("conv_sc", self.conv_sc), ("bn_sc", self.bn_sc)]
        self._sub = sub
        for prefix, layer in sub:
            self.params.extend(layer.params)
            self.param_names.extend(f"{prefix}.{name}" for name in layer.param_names)
            self.buffers.extend(layer.buffers)
            self.buffer_names.extend(f"{prefix}.{name}" for name in layer.buffer_names)

    def forward(self, x, mode):
        h1, c1 = self.conv1.forward(x, mode)
        h2, c2 = self.bn1.forward(h1, mode)
        mask1 = h2 > 0
        h3 = np.maximum(h2, 0)
        h4, c4 = self.conv2.forward(h3, mode)
        h5, c5 = self.bn2.forward(h4, mode)
        if self.projection:
            s1, csc = self.conv_sc.forward(x, mode)
            shortcut, cbn = self.bn_sc.forward(s1, mode)
            sc_cache = (csc, cbn)
        else:
            shortcut, sc_cache = x, None
        pre = h5 + shortcut
        mask2 = pre > 0
        return np.maximum(pre, 0), (c1, c2, mask1, c4, c5, sc_cache, mask2)

    def backward(self, cache, grad_out):
        c1, c2, mask1, c4, c5, sc_cache, mask2 = cache
        g = grad_out * mask2
        gm, g_bn2 = self.bn2.backward(c5, g)
        gm, g_conv2 = self.conv2.backward(c4, gm)
        gm = gm * mask1
        gm, g_bn1 = self.bn1.backward(c2, gm)
        gx_main, g_conv1 = self.conv1.backward(c1, gm)
        grads = g_conv1 + g_bn1 + g_conv2 + g_bn2
        if self.projection:
            gs, g_bnsc = self.bn_sc.backward(sc_cache[1], g)
            gx_sc, g_convsc = self.conv_sc.backward(sc_cache[0], gs)
            grads = grads + g_convsc + g_bnsc
        else:
            gx_sc = g
        return gx_main + gx_sc, grads
