"""ModelGraph container, forward inference and reverse-mode gradients."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument, NonFiniteValue, ShapeMismatch
from .layers import (
    Conv2d,
    MaxPool2d,
    ReLU,
    SkipAdd,
    SoftmaxPerPixel,
    TransposedConv2d,
    is_conv,
)


@dataclass(eq=False)
class ModelGraph:
    layers: list
    num_classes: int
    input_shape: tuple[int, int, int]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.validate()

    def validate(self) -> list[tuple[int, int, int]]:
        """Check chaining invariants; return the output shape of every layer."""
        if self.num_classes < 1:
            raise InvalidArgument("num_classes must be positive")
        if not self.layers or not isinstance(self.layers[-1], SoftmaxPerPixel):
            raise ShapeMismatch("last layer must be SoftmaxPerPixel")
        if sum(isinstance(l, SoftmaxPerPixel) for l in self.layers) != 1:
            raise ShapeMismatch("exactly one SoftmaxPerPixel layer is allowed")
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SkipAdd):
                if not 0 <= layer.source < i:
                    raise ShapeMismatch(f"layer {i}: skip source {layer.source} is not upstream")
                if shapes[layer.source] != shape:
                    raise ShapeMismatch(
                        f"layer {i}: skip source shape {shapes[layer.source]} != {shape}"
                    )
            shape = layer.output_shape(shape)
            if is_conv(layer) and layer.weight is not None:
                if layer.weight.shape != layer.weight_shape:
                    raise ShapeMismatch(f"layer {i}: weight shape {layer.weight.shape}")
                if layer.bias is not None and layer.bias.shape != (layer.out_channels,):
                    raise ShapeMismatch(f"layer {i}: bias shape {layer.bias.shape}")
            shapes.append(shape)
        if shape != (self.num_classes, *self.input_shape[1:]):
            raise ShapeMismatch(
                f"output shape {shape} is not ({self.num_classes}, {self.input_shape[1:]})"
            )
        return shapes

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if is_conv(l)]

    @property
    def dtype(self):
        for layer in self.layers:
            if is_conv(layer) and layer.weight is not None:
                return layer.weight.dtype
        return np.dtype(np.float32)

    def parameters(self):
        """Yield ``((layer_index, name), array)`` for every parameter tensor."""
        for i, layer in enumerate(self.layers):
            if is_conv(layer):
                for name, arr in layer.params().items():
                    yield (i, name), arr

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.layers if is_conv(l))

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelGraph":
        out = self.copy()
        for layer in out.layers:
            if is_conv(layer):
                layer.weight = np.ascontiguousarray(layer.weight, dtype=dtype)
                if layer.bias is not None:
                    layer.bias = np.ascontiguousarray(layer.bias, dtype=dtype)
        return out

    def init_params(self, seed: int, dtype=np.float32) -> "ModelGraph":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if is_conv(layer):
                layer.init_params(rng, dtype)
        return self


def _check_finite(arr, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"non-finite value in {where}")


_FINITE_PRESERVING = (ReLU, MaxPool2d)


def _prepare_input(model: ModelGraph, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or tuple(x.shape[1:]) != model.input_shape:
        raise ShapeMismatch(f"input shape {x.shape} does not match (N, {model.input_shape})")
    if any(is_conv(l) and l.weight is None for l in model.layers):
        raise InvalidArgument("model parameters are not initialized")
    return np.ascontiguousarray(x, dtype=model.dtype)


def _run(model: ModelGraph, x: np.ndarray, keep_cache: bool):
    outputs = []
    caches = []
    h = x
    _check_finite(x, "input")
    for i, layer in enumerate(model.layers):
        if isinstance(layer, SkipAdd):
            h, cache = h + outputs[layer.source], None
        else:
            h, cache = layer.forward(h)
        # ReLU and pooling map finite inputs to finite outputs
        if not isinstance(layer, _FINITE_PRESERVING):
            _check_finite(h, f"layer {i} ({layer.kind}) output")
        outputs.append(h)
        caches.append(cache if keep_cache else None)
    return outputs, caches


def forward(model: ModelGraph, x) -> np.ndarray:
    """Per-pixel class probabilities, shape (N, num_classes, H, W)."""
    x = _prepare_input(model, x)
    outputs, _ = _run(model, x, keep_cache=False)
    return outputs[-1]


def predict(model: ModelGraph, x) -> np.ndarray:
    return forward(model, x).argmax(axis=1)


def _check_target(model: ModelGraph, x: np.ndarray, target) -> np.ndarray:
    target = np.asarray(target)
    if target.shape != (x.shape[0], *x.shape[2:]):
        raise ShapeMismatch(f"target shape {target.shape} does not match input {x.shape}")
    if target.size and (target.min() < 0 or target.max() >= model.num_classes):
        raise InvalidArgument("target class index out of range")
    return target.astype(np.int64)


def loss_value(model: ModelGraph, x, target) -> float:
    """Mean pixel-wise cross-entropy; no gradients."""
    x = _prepare_input(model, x)
    target = _check_target(model, x, target)
    outputs, _ = _run(model, x, keep_cache=False)
    z = _logits_shifted(outputs[-2])
    return float(_cross_entropy(z, target))


def _logits_shifted(logits):
    return logits - logits.max(axis=1, keepdims=True)


def _cross_entropy(z, target):
    logsumexp = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, target[:, None], axis=1)[:, 0]
    return (logsumexp - picked).mean()


def backward(model: ModelGraph, x, target):
    """Mean pixel-wise cross-entropy and its gradient for every parameter.

    Returns ``(loss, grads)`` where ``grads`` maps ``(layer_index, name)`` to
    an array shaped like the parameter.
    """
    x = _prepare_input(model, x)
    target = _check_target(model, x, target)
    outputs, caches = _run(model, x, keep_cache=True)

    probs = outputs[-1]
    z = caches[-1]
    loss = _cross_entropy(z, target)
    _check_finite(np.asarray(loss), "loss")

    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, target[:, None], 1.0, axis=1)
    count = target.size
    # softmax + cross-entropy fused: d loss / d logits
    g = ((probs - onehot) / count).astype(probs.dtype)

    grads = {}
    pending: dict[int, np.ndarray] = {}
    n_layers = len(model.layers)
    pending[n_layers - 2] = g
    for i in range(n_layers - 2, -1, -1):
        g = pending.pop(i, None)
        if g is None:
            # layer output never reaches the loss
            g = np.zeros_like(outputs[i])
        layer = model.layers[i]
        if isinstance(layer, SkipAdd):
            gx = g
            pending[layer.source] = pending.get(layer.source, 0) + g
        else:
            gx, layer_grads = layer.backward(np.ascontiguousarray(g), caches[i])
            for name, arr in layer_grads.items():
                _check_finite(arr, f"layer {i} {name} gradient")
                grads[(i, name)] = arr.astype(model.dtype, copy=False)
        if i > 0:
            pending[i - 1] = pending.get(i - 1, 0) + gx
    return float(loss), grads


def conv_block(in_ch: int, out_ch: int, n_convs: int) -> list:
    layers = []
    ch = in_ch
    for _ in range(n_convs):
        layers += [Conv2d(ch, out_ch, (3, 3), stride=1, padding=1), ReLU()]
        ch = out_ch
    layers.append(MaxPool2d(2, 2))
    return layers


def reference_fcn(seed: int = 0, input_size: int = 32, num_classes: int = 2,
                  widths=(8, 16, 32, 64), convs_per_block=(2, 2, 3, 3),
                  dtype=np.float32) -> ModelGraph:
    """Desk-scale encoder/decoder FCN with one skip connection.

    Encoder: four VGG-style blocks (3x3 convs + ReLU, then 2x2 max-pool).
    Decoder: a stride-4 transposed conv from the bottleneck, a skip add of
    the block-2 pool output, ReLU, and a stride-4 transposed conv to the
    class logits at full resolution.
    """
    if input_size % 16:
        raise InvalidArgument("input_size must be a multiple of 16")
    layers = []
    ch = 1
    skip_source = None
    for b, (width, n) in enumerate(zip(widths, convs_per_block)):
        layers += conv_block(ch, width, n)
        ch = width
        if b == 1:
            skip_source = len(layers) - 1
    skip_ch = widths[1]
    layers += [
        TransposedConv2d(ch, skip_ch, (4, 4), stride=4, padding=0),
        SkipAdd(skip_source),
        ReLU(),
        TransposedConv2d(skip_ch, num_classes, (4, 4), stride=4, padding=0),
        SoftmaxPerPixel(),
    ]
    model = ModelGraph.__new__(ModelGraph)
    model.layers = layers
    model.num_classes = num_classes
    model.input_shape = (1, input_size, input_size)
    model.meta = {"name": "reference_fcn", "seed": seed}
    model.init_params(seed, dtype)
    model.validate()
    return model


def vgg16_fcn_descriptor(input_size: int = 384, num_classes: int = 21) -> ModelGraph:
    """Shape-only FCN-32s over a VGG-16 backbone (parameters never allocated).

    fc6/fc7 are expressed as 7x7 and 1x1 convolutions, followed by a 1x1
    class scorer and a 64x64 stride-32 transposed conv back to input size.
    """
    layers = []
    ch = 3
    for width, n in zip((64, 128, 256, 512, 512), (2, 2, 3, 3, 3)):
        layers += conv_block(ch, width, n)
        ch = width
    pooled = input_size // 32
    fc6_out = pooled - 7 + 1 + 2 * 3
    layers += [
        Conv2d(512, 4096, (7, 7), padding=3), ReLU(),
        Conv2d(4096, 4096, (1, 1)), ReLU(),
        Conv2d(4096, num_classes, (1, 1)),
        TransposedConv2d(num_classes, num_classes, (64, 64), stride=32,
                         padding=(32 * (fc6_out - 1) + 64 - input_size) // 2),
        SoftmaxPerPixel(),
    ]
    return ModelGraph(layers, num_classes, (3, input_size, input_size),
                      meta={"name": "vgg16_fcn32s"})
