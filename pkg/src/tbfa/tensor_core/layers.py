"""Layer primitives with explicit forward/backward passes.

Every layer maps a batch array ``(B, *in_shape)`` to ``(B, *out_shape)``.
``forward`` returns the output plus whatever the layer needs to run
``backward`` later; ``backward`` returns the input gradient and, for
parameterized layers, the weight and bias gradients.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when a layer receives an input of the wrong shape."""


class Layer:
    kind = "layer"
    has_params = False

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError

    def copy(self):
        return self

    def describe(self) -> tuple:
        """Integer descriptor used by the model container format."""
        return ()

    def __repr__(self):
        args = ", ".join(str(a) for a in self.describe())
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"
    has_params = True

    def __init__(self, in_features, out_features, weight=None, bias=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if weight is None:
            weight = np.zeros((self.out_features, self.in_features))
        if bias is None:
            bias = np.zeros(self.out_features)
        self.weight = np.asarray(weight, dtype=np.float64).reshape(self.out_features, self.in_features)
        self.bias = np.asarray(bias, dtype=np.float64).reshape(self.out_features)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"dense expects input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dout, x):
        dw = dout.T @ x
        db = dout.sum(axis=0)
        return dout @ self.weight, dw, db

    def copy(self):
        return Dense(self.in_features, self.out_features, self.weight.copy(), self.bias.copy())

    def describe(self):
        return (self.in_features, self.out_features)


class Conv2d(Layer):
    """2-D convolution over ``(C, H, W)`` inputs, square kernels, im2col based."""

    kind = "conv2d"
    has_params = True

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, weight=None, bias=None):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError("conv2d needs kernel_size >= 1, stride >= 1, padding >= 0")
        wshape = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        if weight is None:
            weight = np.zeros(wshape)
        if bias is None:
            bias = np.zeros(self.out_channels)
        self.weight = np.asarray(weight, dtype=np.float64).reshape(wshape)
        self.bias = np.asarray(bias, dtype=np.float64).reshape(self.out_channels)

    def _spatial(self, h, w):
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        ho, wo = self._spatial(in_shape[1], in_shape[2])
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d kernel {self.kernel_size} does not fit input {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def _cols(self, x):
        k, s, p = self.kernel_size, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]  # (B, C, Ho, Wo, k, k)
        b, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * k * k)
        return cols, xp.shape

    def forward(self, x):
        cols, padded_shape = self._cols(x)
        wmat = self.weight.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias
        return out.transpose(0, 3, 1, 2), (cols, padded_shape)

    def backward(self, dout, cache):
        cols, padded_shape = cache
        k, s, p = self.kernel_size, self.stride, self.padding
        d2 = dout.transpose(0, 2, 3, 1)  # (B, Ho, Wo, O)
        b, ho, wo, _ = d2.shape
        wmat = self.weight.reshape(self.out_channels, -1)
        dw = np.einsum("bhwo,bhwk->ok", d2, cols).reshape(self.weight.shape)
        db = d2.sum(axis=(0, 1, 2))
        dcols = (d2 @ wmat).reshape(b, ho, wo, self.in_channels, k, k)
        dxp = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp, dw, db

    def copy(self):
        return Conv2d(self.in_channels, self.out_channels, self.kernel_size, self.stride,
                      self.padding, self.weight.copy(), self.bias.copy())

    def describe(self):
        return (self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding)


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, mask):
        return dout * mask, None, None


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape):
        return dout.reshape(shape), None, None


class AvgPool2d(Layer):
    """Non-overlapping k x k average pooling; trailing rows/cols that don't fill a window are dropped."""

    kind = "avgpool2d"

    def __init__(self, kernel_size):
        self.kernel_size = int(kernel_size)
        if self.kernel_size < 1:
            raise ValueError("avgpool2d kernel_size must be >= 1")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"avgpool2d expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        k = self.kernel_size
        if h < k or w < k:
            raise ShapeError(f"avgpool2d kernel {k} larger than input {tuple(in_shape)}")
        return (c, h // k, w // k)

    def forward(self, x):
        k = self.kernel_size
        b, c, h, w = x.shape
        ho, wo = h // k, w // k
        out = x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))
        return out, x.shape

    def backward(self, dout, shape):
        k = self.kernel_size
        b, c, h, w = shape
        ho, wo = dout.shape[2], dout.shape[3]
        dx = np.zeros(shape)
        spread = np.repeat(np.repeat(dout, k, axis=2), k, axis=3) / (k * k)
        dx[:, :, :ho * k, :wo * k] = spread
        return dx, None, None

    def describe(self):
        return (self.kernel_size,)


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, Flatten, AvgPool2d)}
