"""JSON checkpoint container for ModelGraph.

Parameter tensors are stored row-major as base64 little-endian bytes in
their native dtype, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from .layers import LAYER_TYPES, is_conv
from .model import ModelGraph

FORMAT = "prunemap-checkpoint"
FORMAT_VERSION = 1

_SPEC_FIELDS = {
    "Conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding", "use_bias"),
    "TransposedConv2d": ("in_channels", "out_channels", "kernel", "stride", "padding", "use_bias"),
    "ReLU": (),
    "MaxPool2d": ("window", "stride"),
    "SkipAdd": ("source",),
    "SoftmaxPerPixel": (),
}


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": arr.dtype.name,
        "shape": list(arr.shape),
        "data": base64.b64encode(le.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    dtype = np.dtype(obj["dtype"]).newbyteorder("<")
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype=dtype).reshape(obj["shape"])
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def model_to_dict(model: ModelGraph) -> dict:
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind}
        for name in _SPEC_FIELDS[layer.kind]:
            value = getattr(layer, name)
            entry[name] = list(value) if isinstance(value, tuple) else value
        if is_conv(layer) and layer.weight is not None:
            entry["weight"] = _encode_array(layer.weight)
            if layer.bias is not None:
                entry["bias"] = _encode_array(layer.bias)
        layers.append(entry)
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "num_classes": model.num_classes,
        "input_shape": list(model.input_shape),
        "meta": model.meta,
        "layers": layers,
    }


def model_from_dict(obj: dict) -> ModelGraph:
    if obj.get("format") != FORMAT:
        raise InvalidArgument("not a prunemap checkpoint")
    if obj.get("format_version") != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {obj.get('format_version')}")
    layers = []
    for entry in obj["layers"]:
        cls = LAYER_TYPES[entry["kind"]]
        kwargs = {name: entry[name] for name in _SPEC_FIELDS[entry["kind"]]}
        if "kernel" in kwargs:
            kwargs["kernel"] = tuple(kwargs["kernel"])
        layer = cls(**kwargs)
        if "weight" in entry:
            layer.weight = _decode_array(entry["weight"])
            layer.bias = _decode_array(entry["bias"]) if "bias" in entry else None
        layers.append(layer)
    return ModelGraph(layers, obj["num_classes"], tuple(obj["input_shape"]), meta=obj.get("meta", {}))


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    return path


def load_checkpoint(path) -> ModelGraph:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
