"""Layer specs for the fully convolutional network IR.

Each layer knows its output shape and how to run forward/backward on NCHW
arrays.  Conv kinds hold their own parameters; ``weight`` may be ``None``
for shape-only descriptors that are counted but never executed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ..errors import ShapeMismatch
from . import kernels

Shape = tuple[int, int, int]


@dataclass(eq=False)
class _ConvBase:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0
    weight: np.ndarray | None = field(default=None, repr=False)
    bias: np.ndarray | None = field(default=None, repr=False)
    use_bias: bool = True

    has_params: ClassVar[bool] = True

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, *self.kernel)

    def param_count(self) -> int:
        kh, kw = self.kernel
        n = self.out_channels * self.in_channels * kh * kw
        return n + (self.out_channels if self.use_bias else 0)

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> None:
        kh, kw = self.kernel
        fan_in = self.in_channels * kh * kw
        fan_out = self.out_channels * kh * kw
        s = np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(-s, s, size=self.weight_shape).astype(dtype)
        self.bias = np.zeros(self.out_channels, dtype=dtype) if self.use_bias else None

    def params(self) -> dict[str, np.ndarray]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def _check_in(self, shape: Shape) -> None:
        if shape[0] != self.in_channels:
            raise ShapeMismatch(
                f"{self.kind} expects {self.in_channels} input channels, got {shape[0]}"
            )


@dataclass(eq=False)
class Conv2d(_ConvBase):
    kind: ClassVar[str] = "Conv2d"

    def output_shape(self, shape: Shape) -> Shape:
        self._check_in(shape)
        kh, kw = self.kernel
        h = (shape[1] + 2 * self.padding - kh) // self.stride + 1
        w = (shape[2] + 2 * self.padding - kw) // self.stride + 1
        if h < 1 or w < 1:
            raise ShapeMismatch(f"Conv2d produces empty output from {shape}")
        return (self.out_channels, h, w)

    def forward(self, x):
        y = kernels.conv2d_forward(x, self.weight, self.bias, self.stride, self.padding)
        return y, x

    def backward(self, gy, x):
        kh, kw = self.kernel
        gx = kernels.conv2d_backward_input(
            gy, self.weight, x.shape[2], x.shape[3], self.stride, self.padding
        )
        grads = {
            "weight": kernels.conv2d_backward_weight(x, gy, kh, kw, self.stride, self.padding)
        }
        if self.bias is not None:
            grads["bias"] = gy.sum(axis=(0, 2, 3))
        return gx, grads


@dataclass(eq=False)
class TransposedConv2d(_ConvBase):
    """Transposed convolution; weight layout is (out, in, kh, kw) like Conv2d."""

    kind: ClassVar[str] = "TransposedConv2d"

    def output_shape(self, shape: Shape) -> Shape:
        self._check_in(shape)
        kh, kw = self.kernel
        h = (shape[1] - 1) * self.stride - 2 * self.padding + kh
        w = (shape[2] - 1) * self.stride - 2 * self.padding + kw
        if h < 1 or w < 1:
            raise ShapeMismatch(f"TransposedConv2d produces empty output from {shape}")
        return (self.out_channels, h, w)

    def _swapped(self):
        # scatter with W[o, c] == gather-adjoint with W^T[c, o]
        return np.ascontiguousarray(self.weight.transpose(1, 0, 2, 3))

    def forward(self, x):
        h, w = self.output_shape(x.shape[1:])[1:]
        y = kernels.conv2d_backward_input(x, self._swapped(), h, w, self.stride, self.padding)
        if self.bias is not None:
            y += self.bias[None, :, None, None]
        return y, x

    def backward(self, gy, x):
        kh, kw = self.kernel
        wt = self._swapped()
        gx = kernels.conv2d_forward(gy, wt, None, self.stride, self.padding)
        gw = kernels.conv2d_backward_weight(gy, x, kh, kw, self.stride, self.padding)
        grads = {"weight": np.ascontiguousarray(gw.transpose(1, 0, 2, 3))}
        if self.bias is not None:
            grads["bias"] = gy.sum(axis=(0, 2, 3))
        return gx, grads


@dataclass(eq=False)
class ReLU:
    kind: ClassVar[str] = "ReLU"
    has_params: ClassVar[bool] = False

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def forward(self, x):
        y = np.maximum(x, x.dtype.type(0))
        return y, y

    def backward(self, gy, y):
        return gy * (y > 0), {}


@dataclass(eq=False)
class MaxPool2d:
    window: int = 2
    stride: int = 2

    kind: ClassVar[str] = "MaxPool2d"
    has_params: ClassVar[bool] = False

    def output_shape(self, shape: Shape) -> Shape:
        c, h, w = shape
        oh = (h - self.window) // self.stride + 1
        ow = (w - self.window) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"MaxPool2d window {self.window} larger than input {shape}")
        return (c, oh, ow)

    def forward(self, x):
        y, arg = kernels.maxpool2d_forward(x, self.window, self.stride)
        return y, (arg, x.shape[2], x.shape[3])

    def backward(self, gy, cache):
        arg, h, w = cache
        return kernels.maxpool2d_backward(np.ascontiguousarray(gy), arg, h, w), {}


@dataclass(eq=False)
class SkipAdd:
    """Adds the output of layer ``source`` to the incoming tensor."""

    source: int

    kind: ClassVar[str] = "SkipAdd"
    has_params: ClassVar[bool] = False

    def output_shape(self, shape: Shape) -> Shape:
        return shape


@dataclass(eq=False)
class SoftmaxPerPixel:
    kind: ClassVar[str] = "SoftmaxPerPixel"
    has_params: ClassVar[bool] = False

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p, z


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv2d, TransposedConv2d, ReLU, MaxPool2d, SkipAdd, SoftmaxPerPixel)
}
CONV_KINDS = (Conv2d, TransposedConv2d)


def is_conv(layer) -> bool:
    return isinstance(layer, CONV_KINDS)
