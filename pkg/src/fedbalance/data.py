"""Image and dataset types, synthetic data generation, file I/O, splitting.

Pixels are float64 values in [0, 1]; quantization to 256 levels happens only
in the dataset file format and inside histogram equalization.  All types are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream

DATASET_MAGIC = b"FBDS"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


def _as_pixels(a: np.ndarray) -> np.ndarray:
    pixels = np.ascontiguousarray(a, dtype=np.float64)
    pixels.setflags(write=False)
    return pixels


@dataclass(frozen=True, eq=False)
class Image:
    """Fixed-size grayscale pixel grid with values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixels", _as_pixels(self.pixels))
        if self.pixels.ndim != 2 or 0 in self.pixels.shape:
            raise ValueError(f"image must be 2-d and nonempty, got shape {self.pixels.shape}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class LabeledExample:
    image: Image
    label: int

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledExample):
            return NotImplemented
        return self.label == other.label and self.image == other.image


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Ordered collection of (image, label) pairs sharing one image shape."""

    num_classes: int
    examples: tuple[LabeledExample, ...]
    image_shape: tuple[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        h, w = self.image_shape
        if h < 1 or w < 1:
            raise ValueError(f"invalid image shape {self.image_shape}")
        for ex in self.examples:
            if ex.image.shape != (h, w):
                raise ValueError(
                    f"image shape {ex.image.shape} differs from dataset shape {(h, w)}"
                )
            if not 0 <= ex.label < self.num_classes:
                raise ValueError(f"label {ex.label} out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.examples)

    def label_histogram(self) -> np.ndarray:
        labels = np.fromiter((ex.label for ex in self.examples), dtype=np.int64, count=len(self))
        return np.bincount(labels, minlength=self.num_classes)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Examples as (images (N,H,W), labels (N,)) float64/int64 arrays."""
        return stack_examples(self.examples, self.image_shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.image_shape == other.image_shape
            and len(self.examples) == len(other.examples)
            and all(a == b for a, b in zip(self.examples, other.examples))
        )


def stack_examples(
    examples, image_shape: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Stack a sequence of LabeledExample into contiguous arrays."""
    n = len(examples)
    images = np.empty((n,) + tuple(image_shape), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i, ex in enumerate(examples):
        images[i] = ex.image.pixels
        labels[i] = ex.label
    return images, labels


def class_template(label: int, image_shape: tuple[int, int]) -> np.ndarray:
    """Deterministic per-class base pattern.

    Classes are concentric radial waves of distinct frequency.  The patterns
    are (near) invariant under flips and small rotations, so augmented copies
    keep their class identity, and distinct frequencies stay linearly
    separable under mild noise.
    """
    h, w = image_shape
    if h < 1 or w < 1:
        raise ValueError(f"invalid image shape {image_shape}")
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    denom = max(cy, cx, 1.0)
    r = np.hypot(yy - cy, xx - cx) / denom
    freq = 1.0 + 0.75 * label
    return 0.5 + 0.4 * np.cos(2.0 * np.pi * freq * r)


def generate_synthetic(
    num_classes: int,
    per_class: int,
    image_shape: tuple[int, int],
    noise_sigma: float,
    rng: RngStream,
) -> LabeledDataset:
    """Synthetic dataset: per-class template plus pixelwise Gaussian noise.

    Examples are ordered class-major (all of class 0 first).  Deterministic
    given the rng lane.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    h, w = image_shape
    if h < 1 or w < 1:
        raise ValueError(f"invalid image shape {image_shape}")

    gen = rng.generator()
    examples: list[LabeledExample] = []
    for c in range(num_classes):
        base = class_template(c, image_shape)
        noise = gen.normal(0.0, noise_sigma, size=(per_class, h, w)) if noise_sigma > 0 else 0.0
        block = np.clip(base[None, :, :] + noise, 0.0, 1.0)
        for i in range(per_class):
            examples.append(LabeledExample(Image(block[i] if noise_sigma > 0 else base), c))
    return LabeledDataset(num_classes, tuple(examples), (h, w))


def split_train_test(
    ds: LabeledDataset, test_fraction: float, rng: RngStream
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; per label, floor(test_fraction * count) goes to test.

    The remainder stays in train.  Outputs preserve the input example order
    and are disjoint with union equal to the input.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    hist = ds.label_histogram()
    if (hist == 0).any():
        empty = int(np.argmin(hist))
        raise ValueError(f"class {empty} has no examples; cannot split")

    gen = rng.generator()
    n = len(ds)
    labels = np.fromiter((ex.label for ex in ds.examples), dtype=np.int64, count=n)
    in_test = np.zeros(n, dtype=bool)
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        n_test = int(test_fraction * len(idx))
        chosen = gen.permutation(idx)[:n_test]
        in_test[chosen] = True

    train = tuple(ex for ex, t in zip(ds.examples, in_test) if not t)
    test = tuple(ex for ex, t in zip(ds.examples, in_test) if t)
    return (
        LabeledDataset(ds.num_classes, train, ds.image_shape),
        LabeledDataset(ds.num_classes, test, ds.image_shape),
    )


def save_dataset(ds: LabeledDataset, path) -> None:
    """Write the binary dataset format (pixels quantized to 256 levels)."""
    h, w = ds.image_shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<HHHHI", DATASET_VERSION, ds.num_classes, h, w, len(ds)))
        for ex in ds.examples:
            f.write(struct.pack("<H", ex.label))
            f.write(np.rint(ex.image.pixels * 255.0).astype(np.uint8).tobytes())


def load_dataset(path) -> LabeledDataset:
    """Read the binary dataset format; bytes map back to [0, 1] by /255."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise DatasetFormatError("malformed header: bad magic")
    if len(blob) < 16:
        raise DatasetFormatError("malformed header: truncated")
    version, num_classes, h, w, count = struct.unpack("<HHHHI", blob[4:16])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if num_classes < 1 or h < 1 or w < 1:
        raise DatasetFormatError("malformed header: zero dimension")

    pos = 16
    rec = 2 + h * w
    if len(blob) - pos != count * rec:
        raise DatasetFormatError(
            f"truncated payload: expected {count * rec} example bytes, got {len(blob) - pos}"
        )
    examples = []
    for _ in range(count):
        (label,) = struct.unpack_from("<H", blob, pos)
        if label >= num_classes:
            raise DatasetFormatError(f"label out of range: {label} >= {num_classes}")
        raw = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos + 2)
        examples.append(LabeledExample(Image(raw.reshape(h, w) / 255.0), label))
        pos += rec
    return LabeledDataset(num_classes, tuple(examples), (h, w))
