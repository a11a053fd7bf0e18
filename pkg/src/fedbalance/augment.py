"""The 14 image transforms and the deficit-filling synthesis procedure.

Every transform preserves shape and clamps its output to [0, 1].
Parameterized transforms draw from the supplied rng lane; the parameter
ranges live in the private helpers below.  Synthesis enumerates transformed
copies in a fixed order: single transforms first, then ordered pairs of
distinct transforms, then ordered triples, each level cycling source images
fastest.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Image
from .rng import RngStream


class TransformKind(enum.IntEnum):
    """Stable encoding of the transform catalog."""

    HFLIP = 0
    VFLIP = 1
    CROP = 2
    INVERT = 3
    SOLARIZE = 4
    ROTATE = 5
    JITTER = 6
    PERSPECTIVE = 7
    SHARPNESS = 8
    GAUSS_NOISE = 9
    HIST_EQ = 10
    CONTRAST = 11
    GAUSS_BLUR = 12
    AFFINE = 13


TRANSFORM_COUNT = len(TransformKind)

_BOX3 = np.full(3, 1.0 / 3.0)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, 0.0, 1.0)


def _affine_about_center(shape: tuple[int, int], fwd: np.ndarray) -> np.ndarray:
    """Inverse warp matrix for a forward affine map applied about the image center."""
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    to_center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    from_center = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    return np.linalg.inv(from_center @ fwd @ to_center)


def _homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 homography H with H @ [sx, sy, 1] ~ [dx, dy, 1] for four point pairs."""
    rows = []
    rhs = []
    for (sx, sy), (dx, dy) in zip(src, dst):
        rows.append([sx, sy, 1, 0, 0, 0, -dx * sx, -dx * sy])
        rhs.append(dx)
        rows.append([0, 0, 0, sx, sy, 1, -dy * sx, -dy * sy])
        rhs.append(dy)
    sol = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs, dtype=np.float64))
    return np.append(sol, 1.0).reshape(3, 3)


def _hflip(p, gen):
    return p[:, ::-1].copy()


def _vflip(p, gen):
    return p[::-1, :].copy()


def _crop(p, gen):
    # sub-rectangle covering 80-95% of each dimension, resized back bilinearly
    h, w = p.shape
    fh = gen.uniform(0.80, 0.95)
    fw = gen.uniform(0.80, 0.95)
    ch = max(1, int(round(fh * h)))
    cw = max(1, int(round(fw * w)))
    top = int(gen.integers(0, h - ch + 1))
    left = int(gen.integers(0, w - cw + 1))
    # dst pixel center j maps to left + (j + 0.5) * cw / w - 0.5
    m = np.array(
        [
            [cw / w, 0.0, left + 0.5 * cw / w - 0.5],
            [0.0, ch / h, top + 0.5 * ch / h - 0.5],
            [0.0, 0.0, 1.0],
        ]
    )
    return _clamp(_kernels.warp_bilinear(p, m, 0.0, True))


def _invert(p, gen):
    return 1.0 - p


def _solarize(p, gen):
    return np.where(p >= 0.5, 1.0 - p, p)


def _rotate(p, gen):
    angle = np.deg2rad(gen.uniform(-15.0, 15.0))
    c, s = np.cos(angle), np.sin(angle)
    fwd = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return _clamp(_kernels.warp_bilinear(p, _affine_about_center(p.shape, fwd), 0.0, False))


def _jitter(p, gen):
    return _clamp(gen.uniform(0.8, 1.2) * p)


def _perspective(p, gen):
    h, w = p.shape
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    moved = corners + np.column_stack(
        [gen.uniform(-0.1 * w, 0.1 * w, 4), gen.uniform(-0.1 * h, 0.1 * h, 4)]
    )
    # content corner c lands at moved[c]; sampling needs the dst -> src map
    inv = _homography_from_points(moved, corners)
    return _clamp(_kernels.warp_bilinear(p, inv, 0.0, False))


def _sharpness(p, gen):
    amount = gen.uniform(0.5, 1.5)
    blurred = _kernels.sepconv2d_clamp(p, _BOX3)
    return _clamp(p + amount * (p - blurred))


def _gauss_noise(p, gen, sigma: float | None = None):
    if sigma is None:
        sigma = gen.uniform(0.02, 0.08)
    return _clamp(p + gen.normal(0.0, sigma, p.shape))


def _hist_eq(p, gen):
    # 256-level equalization; constant images pass through unchanged
    levels = np.clip(np.rint(p * 255.0).astype(np.int64), 0, 255)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    n = p.size
    cdf_min = int(cdf[int(np.argmax(hist > 0))])
    if cdf_min == n:
        return p.copy()
    table = (cdf - cdf_min) / (n - cdf_min)
    return table[levels]


def _contrast(p, gen):
    factor = gen.uniform(0.7, 1.3)
    mean = p.mean()
    return _clamp(mean + factor * (p - mean))


def _gauss_blur(p, gen):
    sigma = gen.uniform(0.5, 1.0)
    t = np.arange(-2.0, 3.0)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return _clamp(_kernels.sepconv2d_clamp(p, k / k.sum()))


def _affine(p, gen):
    h, w = p.shape
    tx = gen.uniform(-0.1 * w, 0.1 * w)
    ty = gen.uniform(-0.1 * h, 0.1 * h)
    scale = gen.uniform(0.9, 1.1)
    shear = np.deg2rad(gen.uniform(-5.0, 5.0))
    fwd = (
        np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
        @ np.array([[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, 1.0]])
        @ np.array([[1.0, np.tan(shear), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    )
    return _clamp(_kernels.warp_bilinear(p, _affine_about_center(p.shape, fwd), 0.0, False))


_TRANSFORMS = {
    TransformKind.HFLIP: _hflip,
    TransformKind.VFLIP: _vflip,
    TransformKind.CROP: _crop,
    TransformKind.INVERT: _invert,
    TransformKind.SOLARIZE: _solarize,
    TransformKind.ROTATE: _rotate,
    TransformKind.JITTER: _jitter,
    TransformKind.PERSPECTIVE: _perspective,
    TransformKind.SHARPNESS: _sharpness,
    TransformKind.GAUSS_NOISE: _gauss_noise,
    TransformKind.HIST_EQ: _hist_eq,
    TransformKind.CONTRAST: _contrast,
    TransformKind.GAUSS_BLUR: _gauss_blur,
    TransformKind.AFFINE: _affine,
}


def apply_transform(img: Image, kind: TransformKind, rng: RngStream) -> Image:
    """Apply one catalog transform; deterministic given the rng lane."""
    gen = rng.generator()
    return Image(_TRANSFORMS[TransformKind(kind)](img.pixels, gen))


def _apply_chain(pixels: np.ndarray, kinds, gen) -> np.ndarray:
    for kind in kinds:
        pixels = _TRANSFORMS[kind](pixels, gen)
    return pixels


@dataclass(frozen=True)
class AugmentPlan:
    """Per-label synthesis workload for one balancing pass."""

    deficits: tuple[tuple[int, int], ...]  # (label, count) with count > 0

    @staticmethod
    def from_targets(histogram, targets) -> "AugmentPlan":
        pairs = tuple(
            (label, int(t) - int(c))
            for label, (c, t) in enumerate(zip(histogram, targets))
            if int(t) - int(c) > 0
        )
        return AugmentPlan(pairs)


def synthesis_capacity(pool_size: int) -> int:
    """Distinct synthesized images reachable at composition depth <= 3."""
    k = TRANSFORM_COUNT
    return pool_size * (k + k * (k - 1) + k * (k - 1) * (k - 2))


def enumerate_plan(pool_size: int, deficit: int) -> list[tuple[int, tuple[TransformKind, ...]]]:
    """The first `deficit` (source_index, transform_chain) items in synthesis order."""
    if deficit < 0:
        raise ValueError("deficit must be >= 0")
    if deficit > synthesis_capacity(pool_size):
        raise ValueError(
            f"deficit {deficit} exceeds depth-3 synthesis capacity "
            f"{synthesis_capacity(pool_size)} for a pool of {pool_size}"
        )
    items: list[tuple[int, tuple[TransformKind, ...]]] = []
    for depth in (1, 2, 3):
        for chain in itertools.permutations(TransformKind, depth):
            for src in range(pool_size):
                if len(items) == deficit:
                    return items
                items.append((src, chain))
    return items


def synthesize(label_pool: list[Image], deficit: int, rng: RngStream) -> list[Image]:
    """Generate exactly `deficit` transformed images from the pool.

    Never returns an untransformed copy; chains apply left to right.
    """
    if deficit == 0:
        return []
    if not label_pool:
        raise ValueError("cannot synthesize from nothing: label pool is empty")
    plan = enumerate_plan(len(label_pool), deficit)
    gen = rng.generator()
    return [Image(_apply_chain(label_pool[src].pixels, chain, gen)) for src, chain in plan]
