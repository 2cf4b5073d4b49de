"""Raster decode/encode and separable Gaussian filtering.

Images are ``(H, W, 3)`` uint8 RGB arrays throughout the package.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp", ".tif", ".tiff")


class ImageDecodeError(OSError):
    """An image file could not be read as an RGB raster."""


def decode_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from None


def encode_png(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def list_images(directory) -> list[Path]:
    """Image files in ``directory`` sorted by stem (the image id)."""
    files = [p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(files, key=lambda p: (p.stem, p.suffix))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(image: np.ndarray, sigma: float, radius: int | None = None, mode: str = "reflect") -> np.ndarray:
    """Separable Gaussian over the two spatial axes, float64 output.

    ``mode="reflect"`` mirrors about the pixel edge (symmetric padding).
    ``radius`` defaults to ``ceil(4 * sigma)``.
    """
    img = np.asarray(image, dtype=np.float64)
    if sigma <= 0:
        return img.copy()
    if radius is None:
        radius = int(math.ceil(4.0 * sigma))
    k = gaussian_kernel(sigma, radius)
    out = ndimage.correlate1d(img, k, axis=0, mode=mode)
    return ndimage.correlate1d(out, k, axis=1, mode=mode)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)
