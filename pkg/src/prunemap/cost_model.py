"""FLOP and parameter-memory accounting, the energy model, and latency timing.

FLOP convention: one multiply-accumulate is 2 FLOPs.  Per layer:

* Conv2d: 2*kh*kw*C_in*H_out*W_out*C_out, plus H_out*W_out*C_out for the bias
* TransposedConv2d: 2*kh*kw*C_in*H_in*W_in*C_out (each input pixel is
  scattered through the kernel), plus H_out*W_out*C_out for the bias
* ReLU, MaxPool2d, SkipAdd: one op per output element
* SoftmaxPerPixel: 5 ops per pixel per class
"""
from __future__ import annotations

import statistics
import threading
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .nn.layers import Conv2d, MaxPool2d, ReLU, SkipAdd, SoftmaxPerPixel, TransposedConv2d, is_conv
from .nn.model import ModelGraph, forward

BYTES_PER_PARAM = 4
MB = 2**20
SOFTMAX_OPS_PER_ELEMENT = 5


@dataclass(frozen=True)
class EnergyConstants:
    e_flop: float = 2.3e-12  # J per 32-bit FLOP
    e_mb: float = 640e-12  # J per MB of parameters read from DRAM


DEFAULT_ENERGY = EnergyConstants()


@dataclass
class ResourceProfile:
    flops: int
    size_mb: float
    energy_j: float
    latency_ms: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def layer_flops(layer, in_shape, out_shape) -> int:
    c_out, h_out, w_out = out_shape
    if isinstance(layer, Conv2d):
        kh, kw = layer.kernel
        n = 2 * kh * kw * layer.in_channels * h_out * w_out * c_out
    elif isinstance(layer, TransposedConv2d):
        kh, kw = layer.kernel
        _, h_in, w_in = in_shape
        n = 2 * kh * kw * layer.in_channels * h_in * w_in * c_out
    elif isinstance(layer, (ReLU, MaxPool2d, SkipAdd)):
        return c_out * h_out * w_out
    elif isinstance(layer, SoftmaxPerPixel):
        return SOFTMAX_OPS_PER_ELEMENT * c_out * h_out * w_out
    else:
        raise InvalidArgument(f"no FLOP rule for {type(layer).__name__}")
    if layer.use_bias:
        n += c_out * h_out * w_out
    return n


def flops_by_layer(model: ModelGraph) -> list[int]:
    shapes = model.validate()
    ins = [model.input_shape] + shapes[:-1]
    return [layer_flops(l, i, o) for l, i, o in zip(model.layers, ins, shapes)]


def count_flops(model: ModelGraph) -> int:
    """FLOPs for a single-image forward pass."""
    return int(sum(flops_by_layer(model)))


def model_size_mb(model: ModelGraph) -> float:
    return model.param_count() * BYTES_PER_PARAM / MB


def estimate_energy(flops: float, size_mb: float, constants: EnergyConstants = DEFAULT_ENERGY) -> float:
    if flops < 0 or size_mb < 0:
        raise InvalidArgument("flops and size_mb must be non-negative")
    return flops * constants.e_flop + size_mb * constants.e_mb


def profile(model: ModelGraph, constants: EnergyConstants = DEFAULT_ENERGY) -> ResourceProfile:
    flops = count_flops(model)
    size = model_size_mb(model)
    return ResourceProfile(flops=flops, size_mb=size, energy_j=estimate_energy(flops, size, constants))


_timer_lock = threading.Lock()


def measure_latency(model: ModelGraph, x=None, repetitions: int = 30, warmup: int = 2) -> float:
    """Median wall-clock milliseconds per forward pass of ``x``.

    ``warmup`` leading runs are discarded.  Measurements are serialized
    process-wide so two timers never overlap.
    """
    if repetitions < 3:
        raise InvalidArgument("repetitions must be >= 3")
    if x is None:
        x = np.random.default_rng(0).random((1, *model.input_shape)).astype(np.float32)
    times = []
    with _timer_lock:
        for _ in range(warmup):
            forward(model, x)
        for _ in range(repetitions):
            t0 = time.perf_counter()
            forward(model, x)
            times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def parameter_count_table(model: ModelGraph) -> list[tuple[int, str, int]]:
    return [(i, l.kind, l.param_count()) for i, l in enumerate(model.layers) if is_conv(l)]
