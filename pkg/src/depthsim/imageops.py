"""Small shared raster helpers: bilinear sampling and bit-depth quantization."""

from __future__ import annotations

import numpy as np


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup of img at float pixel coords; outside the image -> 0.

    Coordinates follow the "pixel centers at integer positions" convention,
    so (0, 0) reads img[0, 0] exactly. Samples beyond the last valid
    center are zero (matching light that falls off the emitter pattern).
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xs = np.clip(x, 0.0, w - 1.0)
    ys = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    v = (img[y0, x0] * (1 - fx) * (1 - fy)
         + img[y0, x1] * fx * (1 - fy)
         + img[y1, x0] * (1 - fx) * fy
         + img[y1, x1] * fx * fy)
    return np.where(inside, v, 0.0)


def quantize_bits(img: np.ndarray, bits: int) -> np.ndarray:
    """Clamp to [0, 1] and round onto the 2**bits-level grid (still float)."""
    if not 1 <= bits <= 16:
        raise ValueError("bit depth must be in [1, 16]")
    m = float(2 ** bits - 1)
    return np.rint(np.clip(img, 0.0, 1.0) * m) / m


def to_levels(img: np.ndarray, bits: int) -> np.ndarray:
    """Intensity grid -> integer quantization levels (int64 array)."""
    m = float(2 ** bits - 1)
    return np.rint(np.clip(img, 0.0, 1.0) * m).astype(np.int64)
