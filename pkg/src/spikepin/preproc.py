"""Frame preprocessing: grayscale, equalization, ROI crops, normalization.

All operations are pure functions on numpy arrays: uint8 images are 2-D
(H, W) arrays in [0, 255], normalized images are float32.  The canonical
pipeline order is grayscale -> equalize -> crop -> zero-mean/unit-variance,
so intensity statistics are local to the ROI.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

# BT.601 luma weights, the de facto default for 8-bit imagery.
_LUMA = np.array([0.299, 0.587, 0.114])

SIGMA_FLOOR = 1e-8


class Label(Enum):
    PIN_OK = "pin_ok"
    PIN_OUT = "pin_out"


class Provenance(Enum):
    REAL_LIKE = "real-like"
    SYNTHETIC_BASE = "synthetic-base"
    AUGMENTED = "augmented"


@dataclass(frozen=True)
class Roi:
    """Crop rectangle; must lie fully inside the source image."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"roi offsets must be non-negative: ({self.x0}, {self.y0})")
        if self.width < 16 or self.height < 16:
            raise ValueError(f"roi must be at least 16x16, got {self.width}x{self.height}")


@dataclass
class LabeledFrame:
    image: np.ndarray  # (H, W) uint8
    label: Label
    source_id: str
    provenance: Provenance


def _check_u8_image(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 image")
    if img.size == 0:
        raise ValueError("zero-sized image")


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma conversion of an (H, W, 3) uint8 image to (H, W) uint8."""
    if not isinstance(rgb, np.ndarray) or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) array")
    if rgb.dtype != np.uint8:
        raise ValueError("expected uint8 input")
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise ValueError("zero-sized image")
    luma = rgb.astype(np.float64) @ _LUMA
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)


def histogram_equalize(img: np.ndarray) -> np.ndarray:
    """Global histogram equalization via the standard CDF remap.

    v' = round(255 * (cdf(v) - cdf_min) / (N - cdf_min)); an image with a
    single intensity level is returned unchanged.
    """
    _check_u8_image(img)
    counts = np.bincount(img.ravel(), minlength=256)
    if np.count_nonzero(counts) == 1:
        return img.copy()
    cdf = counts.cumsum()
    cdf_min = int(cdf[int(img.min())])
    n = img.size
    lut = np.rint(255.0 * (cdf - cdf_min) / (n - cdf_min))
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return lut[img]


def normalize_zmuv(img: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance (population sigma) float32 image.

    Near-constant images (sigma < 1e-8) come back as all zeros rather than
    raising, so batch pipelines never abort on a blank frame.
    """
    _check_u8_image(img)
    x = img.astype(np.float32)
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma < SIGMA_FLOOR:
        return np.zeros_like(x)
    return (x - mu) / np.float32(sigma)


def crop_roi(img: np.ndarray, roi: Roi) -> np.ndarray:
    """Extract a copy of the ROI; raises IndexError if it leaves the image."""
    if not isinstance(img, np.ndarray) or img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    h, w = img.shape
    if roi.x0 + roi.width > w or roi.y0 + roi.height > h:
        raise IndexError(
            f"roi {roi} exceeds image bounds {w}x{h}"
        )
    return img[roi.y0 : roi.y0 + roi.height, roi.x0 : roi.x0 + roi.width].copy()


def stride_subsample(items: Sequence, keep_one_of: int) -> list:
    """Keep items 0, k, 2k, ... in order; stands in for fps downsampling."""
    if not isinstance(keep_one_of, int) or keep_one_of < 1:
        raise ValueError(f"keep_one_of must be an integer >= 1, got {keep_one_of}")
    return list(items[::keep_one_of])
