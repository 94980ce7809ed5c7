"""Image file I/O: 8-bit grayscale / RGB PNG and binary PGM (P5)."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG or PGM file.

    Grayscale files come back as (H, W) uint8, color PNGs as (H, W, 3) uint8.
    """
    with Image.open(path) as im:
        if im.mode in ("L", "I", "I;16"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        elif im.mode in ("RGB", "RGBA", "P", "LA"):
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        else:
            raise ValueError(f"unsupported image mode {im.mode!r}: {path}")
    if arr.size == 0:
        raise ValueError(f"zero-sized image: {path}")
    return arr


def read_grayscale(path: str | os.PathLike) -> np.ndarray:
    """Read a file as (H, W) uint8, converting RGB with BT.601 luma if needed."""
    arr = read_image(path)
    if arr.ndim == 2:
        return arr
    from .preproc import to_grayscale

    return to_grayscale(arr)


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a uint8 image ((H, W) grayscale or (H, W, 3) RGB) as PNG."""
    _check_u8(img)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(path, format="PNG")


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a (H, W) uint8 image as binary PGM (P5)."""
    _check_u8(img)
    if img.ndim != 2:
        raise ValueError("PGM output requires a 2-D grayscale image")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="L").save(path, format="PPM")


def _check_u8(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ValueError("expected a uint8 numpy array")
    if img.ndim not in (2, 3) or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D or 3-D array, got shape {img.shape}")
