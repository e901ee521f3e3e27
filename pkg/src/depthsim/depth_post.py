"""Depth map post-processing: range trimming, median smoothing, hole filling.

Mirrors what devices do after reconstruction. The median filter uses the
lower median over the valid neighbors only, so smoothed depths remain
members of the input value set (in particular they stay on the sensor's
representable depth grid). Hole filling interpolates short invalid runs
along scanlines and never touches pixels that were already valid.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .matcher import DepthMap
from .sensor import SensorModel


def trim(depth: DepthMap, sensor: SensorModel) -> DepthMap:
    """Invalidate depths outside the sensor's operational range."""
    z_min, z_max = sensor.depth_range_m
    keep = depth.valid & (depth.values >= z_min) & (depth.values <= z_max)
    return DepthMap(np.where(keep, depth.values, np.nan), keep)


def smooth(depth: DepthMap, kernel_px: int = 3) -> DepthMap:
    """Median filter over valid neighbors; the validity mask is unchanged.

    Uses the lower median (element at index (n-1)//2 of the sorted valid
    neighborhood), so every output value already existed in the input.
    kernel_px == 1 is the identity.
    """
    if kernel_px < 1 or kernel_px % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    if kernel_px == 1:
        return depth.copy()
    half = kernel_px // 2
    h, w = depth.values.shape
    padded = np.full((h + 2 * half, w + 2 * half), np.nan)
    padded[half:half + h, half:half + w] = np.where(depth.valid, depth.values, np.nan)
    windows = sliding_window_view(padded, (kernel_px, kernel_px)).reshape(h, w, -1)
    ordered = np.sort(windows, axis=-1)          # NaNs sort to the end
    counts = (~np.isnan(windows)).sum(axis=-1)
    idx = np.maximum(counts - 1, 0) // 2
    med = np.take_along_axis(ordered, idx[..., None], axis=-1)[..., 0]
    values = np.where(depth.valid, med, np.nan)
    return DepthMap(values, depth.valid.copy())


def fill_holes(depth: DepthMap, max_gap_px: int = 6) -> DepthMap:
    """Fill invalid scanline runs shorter than max_gap_px by linear interpolation.

    Runs touching the left or right image border are left open; valid
    pixels are never modified. max_gap_px == 0 is the identity.
    """
    if max_gap_px < 0:
        raise ValueError("max_gap_px must be >= 0")
    values = depth.values.copy()
    valid = depth.valid.copy()
    if max_gap_px == 0:
        return DepthMap(values, valid)
    h, w = values.shape
    for y in range(h):
        row_valid = depth.valid[y]
        if row_valid.all() or not row_valid.any():
            continue
        # run starts/ends of invalid stretches
        inv = ~row_valid
        edges = np.diff(inv.astype(np.int8))
        starts = np.nonzero(edges == 1)[0] + 1
        ends = np.nonzero(edges == -1)[0] + 1   # exclusive
        if inv[0]:
            starts = np.concatenate([[0], starts])
        if inv[-1]:
            ends = np.concatenate([ends, [w]])
        for s, e in zip(starts, ends):
            if s == 0 or e == w:
                continue  # touches the border
            if e - s >= max_gap_px:
                continue
            left = depth.values[y, s - 1]
            right = depth.values[y, e]
            t = np.arange(1, e - s + 1, dtype=np.float64) / (e - s + 1)
            values[y, s:e] = left + t * (right - left)
            valid[y, s:e] = True
    return DepthMap(values, valid)
