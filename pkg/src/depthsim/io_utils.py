"""File formats: 16-bit depth PNGs (millimeters, 0 = invalid), grayscale
intensity PNGs for IR debug output, and 32-bit float TIFF disparity dumps
(NaN = invalid)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .matcher import DepthMap, DisparityMap


def write_depth_png(path, depth: DepthMap) -> None:
    """Encode depth in millimeters as 16-bit grayscale; invalid pixels -> 0."""
    mm = np.zeros(depth.values.shape, dtype=np.uint16)
    vals = np.rint(depth.values[depth.valid] * 1000.0)
    mm[depth.valid] = np.clip(vals, 1, 65535).astype(np.uint16)
    Image.fromarray(mm, mode="I;16").save(str(path), format="PNG")


def read_depth_png(path) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    arr = np.asarray(Image.open(str(path)), dtype=np.uint16)
    valid = arr > 0
    values = np.where(valid, arr.astype(np.float64) / 1000.0, np.nan)
    return DepthMap(values, valid)


def write_gray_png(path, img: np.ndarray, bits: int = 16) -> None:
    """Store an intensity grid in [0, 1] as 8- or 16-bit grayscale."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        data = np.rint(img * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="L").save(str(path), format="PNG")
    elif bits == 16:
        data = np.rint(img * 65535.0).astype(np.uint16)
        Image.fromarray(data, mode="I;16").save(str(path), format="PNG")
    else:
        raise ValueError("bits must be 8 or 16")


def read_gray_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    img = Image.open(str(path))
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


def write_disparity_tiff(path, disp: DisparityMap) -> None:
    """32-bit float disparity dump; invalid pixels hold NaN."""
    data = np.where(disp.valid, disp.values, np.nan).astype(np.float32)
    Image.fromarray(data, mode="F").save(str(path), format="TIFF")


def read_disparity_tiff(path) -> DisparityMap:
    arr = np.asarray(Image.open(str(path)), dtype=np.float32).astype(np.float64)
    valid = np.isfinite(arr)
    return DisparityMap(np.where(valid, arr, np.nan), valid)
