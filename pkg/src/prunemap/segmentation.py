"""Synthetic biomass imagery, augmentation, metrics and the biomass estimator."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgument, ShapeMismatch
from .nn.model import ModelGraph, predict
from .nn.train import Dataset

BACKGROUND_MEAN = 0.3
BIOMASS_MEAN = 0.7
PIXEL_NOISE = 0.08


@dataclass
class FieldImage:
    pixels: np.ndarray  # (1, 1, H, W) float32 in [0, 1]
    mask: np.ndarray  # (1, H, W) int64, 0 background / 1 biomass
    field_id: str
    generator_seed: int

    def __post_init__(self):
        if self.pixels.shape[2:] != self.mask.shape[1:]:
            raise ShapeMismatch("pixels and mask spatial dims differ")

    @property
    def biomass_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class BiomassReading:
    field_id: str
    biomass_fraction: float
    latitude: float
    longitude: float
    timestamp: int

    def __post_init__(self):
        if not 0.0 <= self.biomass_fraction <= 1.0:
            raise InvalidArgument("biomass_fraction must lie in [0, 1]")


def generate_field(seed: int, size: int, target_cover: float, field_id: str | None = None) -> FieldImage:
    """Blob-shaped biomass patches over a darker background.

    A smoothed Gaussian noise field is thresholded at the rank that makes
    exactly ``round(target_cover * size**2)`` pixels biomass.
    """
    if size < 8:
        raise InvalidArgument("size must be >= 8")
    if not 0.0 <= target_cover <= 1.0:
        raise InvalidArgument("target_cover must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    smooth = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10, mode="wrap")
    n_pix = size * size
    k = int(round(target_cover * n_pix))
    flat = np.zeros(n_pix, dtype=np.int64)
    if k:
        # stable ordering keeps the threshold deterministic under ties
        flat[np.argsort(-smooth.ravel(), kind="stable")[:k]] = 1
    mask = flat.reshape(size, size)

    means = np.where(mask == 1, BIOMASS_MEAN, BACKGROUND_MEAN)
    pixels = means + PIXEL_NOISE * rng.standard_normal((size, size))
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)
    return FieldImage(
        pixels=pixels[None, None],
        mask=mask[None],
        field_id=field_id if field_id is not None else f"field-{seed}",
        generator_seed=int(seed),
    )


# augmentation ops


@dataclass(frozen=True)
class Scale:
    """Nearest-neighbour zoom about the image centre, cropped to the original size."""

    factor: float = 1.5


@dataclass(frozen=True)
class Contrast:
    gain: float = 1.2
    pivot: float = 0.0


@dataclass(frozen=True)
class Mirror:
    axis: str = "horizontal"


@dataclass(frozen=True)
class Rotate90:
    angle: int = 90


def _zoom_indices(n: int, factor: float) -> np.ndarray:
    centre = (n - 1) / 2.0
    src = np.floor(centre + (np.arange(n) - centre) / factor + 0.5).astype(int)
    return np.clip(src, 0, n - 1)


def _apply(op, pixels: np.ndarray, mask: np.ndarray):
    if isinstance(op, Mirror):
        if op.axis not in ("horizontal", "vertical"):
            raise InvalidArgument(f"unknown mirror axis {op.axis!r}")
        ax = -1 if op.axis == "horizontal" else -2
        return np.flip(pixels, axis=ax), np.flip(mask, axis=ax)
    if isinstance(op, Rotate90):
        if op.angle % 90:
            raise InvalidArgument(f"rotation angle {op.angle} is not a multiple of 90")
        k = (op.angle // 90) % 4
        return np.rot90(pixels, k, axes=(-2, -1)), np.rot90(mask, k, axes=(-2, -1))
    if isinstance(op, Contrast):
        out = np.clip(op.pivot + op.gain * (pixels - op.pivot), 0.0, 1.0)
        return out.astype(pixels.dtype), mask
    if isinstance(op, Scale):
        if op.factor <= 0:
            raise InvalidArgument("scale factor must be positive")
        h, w = pixels.shape[-2:]
        rows = _zoom_indices(h, op.factor)[:, None]
        cols = _zoom_indices(w, op.factor)[None, :]
        return pixels[..., rows, cols], mask[..., rows, cols]
    raise InvalidArgument(f"unsupported augmentation {op!r}")


def augment(image: FieldImage, ops) -> FieldImage:
    ops = list(ops)
    if not ops:
        raise InvalidArgument("ops must be non-empty")
    pixels, mask = image.pixels, image.mask
    for op in ops:
        pixels, mask = _apply(op, pixels, mask)
    return FieldImage(
        pixels=np.ascontiguousarray(pixels),
        mask=np.ascontiguousarray(mask),
        field_id=image.field_id,
        generator_seed=image.generator_seed,
    )


# metrics


def pixel_accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise InvalidArgument("empty masks")
    return float((pred == truth).mean())


def mean_iou(pred, truth, num_classes: int = 2) -> float:
    """Mean intersection-over-union over classes present in either mask."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"{pred.shape} vs {truth.shape}")
    ious = []
    for c in range(num_classes):
        union = np.logical_or(pred == c, truth == c).sum()
        if union:
            ious.append(np.logical_and(pred == c, truth == c).sum() / union)
    return float(np.mean(ious)) if ious else 1.0


def biomass_fraction(labels) -> float:
    return float((np.asarray(labels) == 1).mean())


def estimate_biomass(model: ModelGraph, image: FieldImage, latitude: float = 0.0,
                     longitude: float = 0.0, timestamp: int = 0) -> BiomassReading:
    """Share of pixels whose argmax class is biomass (class 1)."""
    labels = predict(model, image.pixels)
    return BiomassReading(
        field_id=image.field_id,
        biomass_fraction=biomass_fraction(labels),
        latitude=latitude,
        longitude=longitude,
        timestamp=timestamp,
    )


# datasets


def random_augmentation(rng: np.random.Generator) -> list:
    ops = [Rotate90(90 * int(rng.integers(4)))]
    if rng.random() < 0.5:
        ops.append(Mirror("horizontal"))
    ops.append(Contrast(gain=float(rng.uniform(0.85, 1.15))))
    if rng.random() < 0.25:
        ops.append(Scale(float(rng.uniform(1.0, 1.5))))
    return ops


def field_specs(n: int, size: int, seed: int, cover_range=(0.1, 0.9), prefix: str = "f") -> list[dict]:
    rng = np.random.default_rng(seed)
    lo, hi = cover_range
    return [
        {
            "field_id": f"{prefix}{i:04d}",
            "seed": int(rng.integers(0, 2**31 - 1)),
            "size": size,
            "target_cover": round(float(rng.uniform(lo, hi)), 6),
        }
        for i in range(n)
    ]


def fields_from_specs(specs: list[dict]) -> list[FieldImage]:
    return [generate_field(s["seed"], s["size"], s["target_cover"], s["field_id"]) for s in specs]


def to_dataset(fields: list[FieldImage]) -> Dataset:
    return Dataset(
        np.concatenate([f.pixels for f in fields]),
        np.concatenate([f.mask for f in fields]),
    )


def make_dataset(n: int, size: int = 32, seed: int = 0, augment_seed: int | None = None,
                 cover_range=(0.1, 0.9)) -> Dataset:
    """``n`` seeded synthetic fields, optionally randomly augmented."""
    fields = fields_from_specs(field_specs(n, size, seed, cover_range))
    if augment_seed is not None:
        rng = np.random.default_rng(augment_seed)
        fields = [augment(f, random_augmentation(rng)) for f in fields]
    return to_dataset(fields)


# on-disk format: magic, dtype tag, ndim, dims (uint32), little-endian data

_MAGIC = b"PMAR"
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<i8"), 3: np.dtype("u1"), 4: np.dtype("<f8")}
_TAG_OF = {v.str: k for k, v in _DTYPE_TAGS.items()}


def write_array(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    tag = _TAG_OF.get(dtype.str)
    if tag is None:
        raise InvalidArgument(f"unsupported dtype {arr.dtype}")
    header = _MAGIC + struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(dtype, copy=False).tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise InvalidArgument(f"{path}: bad magic")
    tag, ndim = struct.unpack_from("<BB", raw, 4)
    dims = struct.unpack_from(f"<{ndim}I", raw, 6)
    if tag not in _DTYPE_TAGS:
        raise InvalidArgument(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    if len(raw) != 6 + 4 * ndim + dtype.itemsize * int(np.prod(dims)):
        raise InvalidArgument(f"{path}: payload size does not match header")
    data = np.frombuffer(raw, dtype=dtype, offset=6 + 4 * ndim)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_dataset(directory, specs: list[dict]) -> Path:
    """Generate the fields in ``specs`` and persist images, masks and manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    for spec, field_img in zip(specs, fields_from_specs(specs)):
        img_name = f"{spec['field_id']}.img"
        mask_name = f"{spec['field_id']}.mask"
        write_array(directory / img_name, field_img.pixels[0])
        write_array(directory / mask_name, field_img.mask[0].astype(np.uint8))
        manifest.append({**spec, "image": img_name, "mask": mask_name})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def read_dataset(manifest_path) -> tuple[list[dict], Dataset]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    images = [read_array(base / m["image"]) for m in manifest]
    masks = [read_array(base / m["mask"]).astype(np.int64) for m in manifest]
    return manifest, Dataset(np.stack(images), np.stack(masks))
