"""Disparity recovery by SAD block matching along the epipolar axis.

The capture is matched against the stored reference image (the emitter
acting as second eye). Matching runs on integer quantization levels and
all window sums are exact integer arithmetic, so an independent
brute-force scan reproduces the optimized kernel bit for bit, subpixel
values included.

Stages inside :func:`compute_disparity`:

1. quantize both images to the ADC level grid;
2. texture gate: windows whose raw level range is below a threshold can
   never match reliably and are rejected up front;
3. local response normalization: per-pixel scaled deviation from the
   window mean, divided by mean absolute deviation (all integer window
   sums; the division result is re-quantized to signed integer levels).
   This removes the DC/amplitude mismatch between the bright stored
   reference and captures dimmed by distance falloff;
4. integer SAD scan over the epipolar search range with
   smallest-disparity tie-break, a uniqueness ratio test against the
   best competitor outside +-1 px, and 3-point parabolic subpixel
   refinement snapped to the subpixel grid;
5. conversion of the matched offset to absolute disparity via the
   reference-plane offset, and range rejection.

Holes (None / invalid pixels) come from the texture gate, the
uniqueness test, empty effective search ranges at the image edges, and
out-of-range refined disparities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy import ndimage

from .render import IrCapture
from .sensor import HORIZONTAL, VERTICAL, SensorModel

TEXTURE_MIN_LEVELS = 2       # reject windows with raw range below this
UNIQUENESS_RATIO = 0.8       # reject when best > ratio * second-best
PREFILTER_GAIN = 64.0        # scale of the normalized response
PREFILTER_FLOOR = 2.0        # MAD floor (levels) against noise blow-up

_BIG = np.int64(1) << 62


@dataclass
class DisparityMap:
    """Per-pixel subpixel disparity (px). Invalid entries hold NaN."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise ValueError("values/valid shape mismatch")

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


@dataclass
class DepthMap:
    """Per-pixel metric depth (m). Invalid entries hold NaN."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise ValueError("values/valid shape mismatch")

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())


# ---------------------------------------------------------------------------
# building blocks


def sad_cost(i_s: np.ndarray, i_t: np.ndarray, x: int, y: int, u: int, v: int,
             w: int) -> float:
    """Sum of absolute differences between two w x w blocks.

    The block is anchored at its top-left corner: rows y..y+w-1 and
    columns x..x+w-1 of `i_s` against the block displaced by (u, v) in
    `i_t`. Both blocks must lie fully inside their images.
    """
    i_s = np.asarray(i_s)
    i_t = np.asarray(i_t)
    if x < 0 or y < 0 or y + w > i_s.shape[0] or x + w > i_s.shape[1]:
        raise ValueError("source block out of bounds")
    if x + u < 0 or y + v < 0 or y + v + w > i_t.shape[0] or x + u + w > i_t.shape[1]:
        raise ValueError("target block out of bounds")
    a = i_s[y:y + w, x:x + w]
    b = i_t[y + v:y + v + w, x + u:x + u + w]
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).sum())


def quantize_levels(img: np.ndarray, bits: int) -> np.ndarray:
    """Intensities -> integer ADC levels (int64)."""
    m = float(2 ** bits - 1)
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * m).astype(np.int64)


def _box_sum(arr: np.ndarray, half: int) -> np.ndarray:
    """Exact integer sum over centered (2*half+1)^2 windows, edge-replicated."""
    padded = np.pad(arr, half, mode="edge")
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = padded.cumsum(axis=0, dtype=np.int64).cumsum(axis=1)
    w = 2 * half + 1
    return sat[w:, w:] - sat[:-w, w:] - sat[w:, :-w] + sat[:-w, :-w]


def normalize_response(levels: np.ndarray, window: int,
                       gain: float = PREFILTER_GAIN,
                       floor: float = PREFILTER_FLOOR,
                       clip_levels: int | None = None) -> np.ndarray:
    """Signed integer local-contrast response used as matching input.

    response = rint(gain * (L - mean) / (MAD + floor)), computed from
    exact integer window sums (n*L - S over A/n**2), clipped symmetrically.
    """
    levels = np.asarray(levels, dtype=np.int64)
    half = window // 2
    n = window * window
    s = _box_sum(levels, half)
    dev = n * levels - s
    act = _box_sum(np.abs(dev), half)
    q = np.rint(gain * (dev * np.int64(n)).astype(np.float64)
                / (act + floor * n * n).astype(np.float64)).astype(np.int64)
    if clip_levels is not None:
        np.clip(q, -clip_levels, clip_levels, out=q)
    return q


def texture_mask(levels: np.ndarray, window: int,
                 min_levels: int = TEXTURE_MIN_LEVELS) -> np.ndarray:
    """True where the raw window level range reaches `min_levels`."""
    rng = (ndimage.maximum_filter(levels, size=window)
           - ndimage.minimum_filter(levels, size=window))
    return rng >= min_levels


# ---------------------------------------------------------------------------
# optimized scan kernel


_BAND_ROWS = 48  # rows per incremental run; also the parallel work unit


@njit(cache=True, parallel=True)
def _match_rows(q_s, q_t, tex_ok, pad, lo, hi, half, sub_s, k0, ratio,
                d_min_px, d_max_px, out_k, out_valid, out_cost):
    height, width = q_s.shape
    width_t = q_t.shape[1]
    n_u = hi - lo + 1
    w = 2 * half + 1
    y_begin = half
    n_rows = height - 2 * half
    if n_rows <= 0:
        return
    n_bands = (n_rows + _BAND_ROWS - 1) // _BAND_ROWS
    for band in prange(n_bands):
        yb0 = y_begin + band * _BAND_ROWS
        yb1 = min(yb0 + _BAND_ROWS, y_begin + n_rows)
        colmat = np.zeros((n_u, width), dtype=np.int64)
        costmat = np.full((n_u, width), _BIG)
        for y in range(yb0, yb1):
            for ui in range(n_u):
                u = lo + ui
                # capture columns whose target column x + pad + u is in range
                cl = max(0, -u - pad)
                cr = min(width - 1, width_t - 1 - pad - u)
                if cr - cl + 1 < w:
                    continue
                if y == yb0:
                    for x in range(cl, cr + 1):
                        acc = np.int64(0)
                        for j in range(-half, half + 1):
                            acc += abs(q_s[y + j, x] - q_t[y + j, x + pad + u])
                        colmat[ui, x] = acc
                else:
                    ya = y + half        # row entering the window
                    yr = y - half - 1    # row leaving the window
                    for x in range(cl, cr + 1):
                        colmat[ui, x] += (abs(q_s[ya, x] - q_t[ya, x + pad + u])
                                          - abs(q_s[yr, x] - q_t[yr, x + pad + u]))
                acc = np.int64(0)
                for x in range(cl, cl + w):
                    acc += colmat[ui, x]
                costmat[ui, cl + half] = acc
                for x in range(cl + half + 1, cr - half + 1):
                    acc += colmat[ui, x + half] - colmat[ui, x - half - 1]
                    costmat[ui, x] = acc
            for x in range(half, width - half):
                if not tex_ok[y, x]:
                    continue
                lo_eff = max(lo, half - pad - x)
                hi_eff = min(hi, width_t - 1 - half - pad - x)
                if lo_eff > hi_eff:
                    continue
                best_cost = _BIG
                best_u = 0
                for u in range(lo_eff, hi_eff + 1):
                    c = costmat[u - lo, x]
                    if c < best_cost:
                        best_cost = c
                        best_u = u
                if best_cost >= _BIG:
                    continue
                # a minimum pressed against a truncated range end is
                # unreliable: the true optimum usually lies beyond the edge
                if best_u == lo_eff and lo_eff > lo:
                    continue
                if best_u == hi_eff and hi_eff < hi:
                    continue
                second = _BIG
                for u in range(lo_eff, hi_eff + 1):
                    if u < best_u - 1 or u > best_u + 1:
                        c = costmat[u - lo, x]
                        if c < second:
                            second = c
                if second < _BIG and best_cost > ratio * second:
                    continue
                delta = 0.0
                if lo_eff < best_u < hi_eff:
                    cm = costmat[best_u - 1 - lo, x]
                    cp = costmat[best_u + 1 - lo, x]
                    denom = cm - 2 * best_cost + cp
                    if denom > 0:
                        delta = 0.5 * (cm - cp) / denom
                k = best_u * sub_s + np.int64(np.rint(delta * sub_s)) + k0
                d = k / float(sub_s)
                if d < d_min_px or d > d_max_px:
                    continue
                out_k[y, x] = k
                out_valid[y, x] = True
                out_cost[y, x] = best_cost


# ---------------------------------------------------------------------------
# public operations


def compute_disparity(capture, reference: np.ndarray, sensor: SensorModel,
                      *, texture_min_levels: int = TEXTURE_MIN_LEVELS,
                      uniqueness_ratio: float = UNIQUENESS_RATIO,
                      prefilter_gain: float = PREFILTER_GAIN,
                      prefilter_floor: float = PREFILTER_FLOOR) -> DisparityMap:
    """Dense subpixel disparity of `capture` against `reference`.

    Search bounds come from the sensor's operational depth range. Border
    pixels (within half a window of any edge) are invalid, as are pixels
    failing the texture or uniqueness gates or whose refined disparity
    leaves the valid range.
    """
    img = capture.image if isinstance(capture, IrCapture) else np.asarray(capture)
    ref = np.asarray(reference)
    cam = sensor.camera
    if img.shape != (cam.height, cam.width):
        raise ValueError("capture must be at camera resolution")
    pl, pr = sensor.search_pads_px()
    if sensor.orientation == HORIZONTAL:
        padded_shape = (cam.height, cam.width + pl + pr)
    else:
        padded_shape = (cam.height + pl + pr, cam.width)
    if ref.shape == img.shape:
        pad = 0
    elif ref.shape == padded_shape:
        pad = pl
    else:
        raise ValueError(
            f"reference shape {ref.shape} is neither camera resolution "
            f"{img.shape} nor the search-padded {padded_shape}")

    bits = sensor.ir_bit_depth
    window = sensor.window_size_px
    sub_s = sensor.subpixel_denominator
    d_min_px, d_max_px = sensor.disparity_bounds_px
    k0 = int(np.rint(sensor.reference_offset_px * sub_s))
    lo = int(np.floor(d_min_px - k0 / sub_s))
    hi = int(np.ceil(d_max_px - k0 / sub_s))

    l_s = quantize_levels(img, bits)
    l_t = quantize_levels(ref, bits)
    clip = (2 ** bits - 1) // 2
    tex = texture_mask(l_s, window, texture_min_levels)
    q_s = normalize_response(l_s, window, prefilter_gain, prefilter_floor, clip)
    q_t = normalize_response(l_t, window, prefilter_gain, prefilter_floor, clip)

    if sensor.orientation == VERTICAL:
        q_s, q_t, tex = q_s.T, q_t.T, tex.T

    q_s = np.ascontiguousarray(q_s)
    q_t = np.ascontiguousarray(q_t)
    tex = np.ascontiguousarray(tex)
    out_k = np.zeros(q_s.shape, dtype=np.int64)
    out_valid = np.zeros(q_s.shape, dtype=np.bool_)
    out_cost = np.zeros(q_s.shape, dtype=np.int64)
    _match_rows(q_s, q_t, tex, pad, lo, hi, window // 2, sub_s, k0,
                float(uniqueness_ratio), float(d_min_px), float(d_max_px),
                out_k, out_valid, out_cost)

    if sensor.orientation == VERTICAL:
        out_k, out_valid = out_k.T, out_valid.T

    values = np.where(out_valid, out_k / float(sub_s), np.nan)
    return DisparityMap(values, out_valid)


def match_block(i_s: np.ndarray, i_t: np.ndarray, x: int, y: int,
                search: tuple[float, float], orientation: str = HORIZONTAL,
                *, window: int = 9, subpixel_denominator: int = 8,
                bit_depth: int = 10, texture_min_levels: int = TEXTURE_MIN_LEVELS,
                uniqueness_ratio: float = UNIQUENESS_RATIO,
                prefilter_gain: float = PREFILTER_GAIN,
                prefilter_floor: float = PREFILTER_FLOOR,
                target_pad: int = 0):
    """Match one pixel of `i_s` against `i_t` along the epipolar axis.

    Returns (disparity_px, cost) for the best integer offset in `search`
    (inclusive float bounds) after subpixel refinement, or None when the
    window is untextured, the search range is empty at this pixel, the
    best offset sits on an image-truncated range end, the uniqueness test
    fails, or the refined offset leaves `search`.

    `i_t` may extend `target_pad` pixels before and arbitrarily many after
    `i_s` along the epipolar axis (a search-padded reference); offset u
    compares i_s[.., x] against i_t[.., x + target_pad + u].
    """
    i_s = np.asarray(i_s)
    i_t = np.asarray(i_t)
    if orientation == VERTICAL:
        return match_block(i_s.T, i_t.T, y, x, search, HORIZONTAL,
                           window=window, subpixel_denominator=subpixel_denominator,
                           bit_depth=bit_depth, texture_min_levels=texture_min_levels,
                           uniqueness_ratio=uniqueness_ratio,
                           prefilter_gain=prefilter_gain,
                           prefilter_floor=prefilter_floor,
                           target_pad=target_pad)
    if orientation != HORIZONTAL:
        raise ValueError(f"unknown orientation '{orientation}'")
    if i_t.shape[0] != i_s.shape[0] or i_t.shape[1] < i_s.shape[1]:
        raise ValueError("target must share rows and be at least as wide")

    height, width = i_s.shape
    width_t = i_t.shape[1]
    half = window // 2
    if not (half <= x < width - half and half <= y < height - half):
        raise ValueError("window around (x, y) not inside i_s")
    a, b = float(search[0]), float(search[1])
    if a > b:
        raise ValueError("empty search range")

    l_s = quantize_levels(i_s, bit_depth)
    l_t = quantize_levels(i_t, bit_depth)
    win = l_s[y - half:y + half + 1, x - half:x + half + 1]
    if int(win.max() - win.min()) < texture_min_levels:
        return None
    clip = (2 ** bit_depth - 1) // 2
    q_s = normalize_response(l_s, window, prefilter_gain, prefilter_floor, clip)
    q_t = normalize_response(l_t, window, prefilter_gain, prefilter_floor, clip)

    lo = int(np.floor(a))
    hi = int(np.ceil(b))
    lo_eff = max(lo, half - target_pad - x)
    hi_eff = min(hi, width_t - 1 - half - target_pad - x)
    if lo_eff > hi_eff:
        return None

    src = q_s[y - half:y + half + 1, x - half:x + half + 1]
    costs = np.empty(hi_eff - lo_eff + 1, dtype=np.int64)
    for i, u in enumerate(range(lo_eff, hi_eff + 1)):
        xt = x + target_pad + u
        tgt = q_t[y - half:y + half + 1, xt - half:xt + half + 1]
        costs[i] = np.abs(src - tgt).sum()
    best_i = int(np.argmin(costs))  # first minimum = smallest offset
    best_u = lo_eff + best_i
    best_cost = int(costs[best_i])

    # minima pressed against a truncated range end are unreliable
    if best_u == lo_eff and lo_eff > lo:
        return None
    if best_u == hi_eff and hi_eff < hi:
        return None

    outside = np.abs(np.arange(lo_eff, hi_eff + 1) - best_u) > 1
    if np.any(outside):
        second = int(costs[outside].min())
        if best_cost > uniqueness_ratio * second:
            return None

    delta = 0.0
    if lo_eff < best_u < hi_eff:
        cm = int(costs[best_i - 1])
        cp = int(costs[best_i + 1])
        denom = cm - 2 * best_cost + cp
        if denom > 0:
            delta = 0.5 * (cm - cp) / denom
    sub_s = subpixel_denominator
    k = best_u * sub_s + int(np.rint(delta * sub_s))
    d = k / float(sub_s)
    if d < a or d > b:
        return None
    return d, best_cost


def disparity_to_depth(disp: DisparityMap, sensor: SensorModel) -> DepthMap:
    """z = f * b / d per valid pixel; out-of-range results are invalidated."""
    fb = sensor.epipolar_focal_px * sensor.baseline_m
    z_min, z_max = sensor.depth_range_m
    with np.errstate(divide="ignore", invalid="ignore"):
        z = fb / disp.values
    valid = disp.valid & (disp.values > 0) & (z >= z_min) & (z <= z_max)
    return DepthMap(np.where(valid, z, np.nan), valid)
