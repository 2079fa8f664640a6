"""Resizing and training-time geometric augmentation.

Both reduce to separable axis-aligned resampling: every output row and column
reads from a fractional source coordinate, so an image is warped with two
small interpolation matrices, ``Ry @ img @ Rx.T``.  Pixel ``i`` covers
``[i, i + 1)`` and its centre sits at ``i + 0.5``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigurationError
from .synth import LabeledSample


def _linear_weights(src: np.ndarray, n: int, edge: str) -> np.ndarray:
    """(len(src), n) bilinear weights for fractional pixel-index coordinates ``src``."""
    R = np.zeros((src.size, n))
    if edge == "clamp":
        src = np.clip(src, 0.0, n - 1.0)
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    rows = np.arange(src.size)
    for idx, w in ((lo, 1.0 - frac), (lo + 1, frac)):
        ok = (idx >= 0) & (idx < n) & (w > 0)
        R[rows[ok], idx[ok]] += w[ok]
    return R


def _nearest_index(src: np.ndarray, n: int) -> np.ndarray:
    """Index of the source pixel containing each coordinate, -1 when outside."""
    idx = np.floor(src + 0.5).astype(np.int64)
    idx[(idx < 0) | (idx >= n)] = -1
    return idx


def _warp(img: np.ndarray, src_y: np.ndarray, src_x: np.ndarray, edge: str) -> np.ndarray:
    H, W = img.shape[-2:]
    Ry = _linear_weights(src_y, H, edge)
    Rx = _linear_weights(src_x, W, edge)
    out = np.einsum("oh,...hw,pw->...op", Ry, img.astype(np.float64), Rx, optimize=True)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def _warp_nearest(mask: np.ndarray, src_y: np.ndarray, src_x: np.ndarray) -> np.ndarray:
    iy = _nearest_index(src_y, mask.shape[0])
    ix = _nearest_index(src_x, mask.shape[1])
    out = mask[np.maximum(iy, 0)][:, np.maximum(ix, 0)]
    out[iy < 0] = 0
    out[:, ix < 0] = 0
    return out


def _resize_coords(n_out: int, n_in: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize(image: np.ndarray, target) -> np.ndarray:
    """Bilinear resize of a (C x) H x W image to ``target`` (int or (h, w)); edges replicate."""
    h, w = (target, target) if np.isscalar(target) else target
    if min(h, w) < 8:
        raise ConfigurationError(f"resize target must be >= 8 pixels, got {(h, w)}")
    H, W = image.shape[-2:]
    if (h, w) == (H, W):
        return image.copy()
    return _warp(image, _resize_coords(h, H), _resize_coords(w, W), "clamp")


def resize_mask(mask: np.ndarray, target) -> np.ndarray:
    h, w = (target, target) if np.isscalar(target) else target
    H, W = mask.shape
    return _warp_nearest(mask, _resize_coords(h, H), _resize_coords(w, W))


@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    area: float = 1.0        # crop area fraction
    crop_y: float = 0.0      # crop offset as a fraction of the free margin, in [0, 1]
    crop_x: float = 0.0
    scale: float = 1.0       # zoom about the crop centre

    @property
    def magnification(self) -> float:
        return self.scale / np.sqrt(self.area)


MAX_MAGNIFICATION_CHANGE = 0.06


def draw_augment(rng: np.random.Generator, area: Tuple[float, float] = (0.9, 1.0),
                 scale: Tuple[float, float] = (0.9, 1.1)) -> AugmentParams:
    """Random flips, crop and scale.

    Scale is drawn in ``scale`` and then limited so that crop and scale
    together magnify by at most ``MAX_MAGNIFICATION_CHANGE`` either way; a
    larger zoom changes the vessel-pixel count of thin masks by more than a
    quarter.
    """
    flip_h, flip_v = rng.random(2) < 0.5
    a = rng.uniform(*area)
    cy, cx = rng.random(2)
    s = rng.uniform(*scale)
    root = np.sqrt(a)
    s = float(np.clip(s, (1 - MAX_MAGNIFICATION_CHANGE) * root, (1 + MAX_MAGNIFICATION_CHANGE) * root))
    return AugmentParams(bool(flip_h), bool(flip_v), float(a), float(cy), float(cx), s)


def _augment_coords(n: int, p: AugmentParams, offset: float) -> np.ndarray:
    side = np.sqrt(p.area) * n
    centre = offset * (n - side) + side / 2.0
    return centre + ((np.arange(n) + 0.5) - n / 2.0) * (side / (n * p.scale)) - 0.5


def apply_augment(image: np.ndarray, mask: Optional[np.ndarray], p: AugmentParams):
    """Warp a C x H x W image (bilinear, zero outside) and its mask (nearest) identically."""
    H, W = image.shape[-2:]
    sy = _augment_coords(H, p, p.crop_y)
    sx = _augment_coords(W, p, p.crop_x)
    if p.flip_v:
        sy = sy[::-1]
    if p.flip_h:
        sx = sx[::-1]
    identity = np.array_equal(sy, np.arange(H)) and np.array_equal(sx, np.arange(W))
    out = image.copy() if identity else _warp(image, sy, sx, "zero")
    out_mask = None
    if mask is not None:
        out_mask = mask.copy() if identity else _warp_nearest(mask, sy, sx)
    return out, out_mask


def augment(sample: LabeledSample, rng: np.random.Generator) -> LabeledSample:
    image, mask = apply_augment(sample.image, sample.mask, draw_augment(rng))
    return LabeledSample(image, mask, sample.label, sample.id)


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([apply_augment(img, None, draw_augment(rng))[0] for img in images])
