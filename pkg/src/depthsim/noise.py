"""Imaging degradations applied to the ideal capture.

Stage order in the pipeline: lens distortion (optics) -> grain and
scratches (lens/surface) -> i.i.d. Gaussian noise (electronics) -> clamp
and ADC quantization. Everything is a pure function of (image, config),
deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageops import quantize_bits, sample_bilinear
from .render import IrCapture
from .sensor import Intrinsics


@dataclass(frozen=True)
class NoiseConfig:
    gaussian_sigma: float = 0.002   # additive i.i.d., intensity units
    grain_sigma: float = 0.2        # multiplicative speckle-like field
    grain_scale_px: float = 0.7     # correlation radius of the grain field
    scratch_count: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.grain_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.grain_scale_px < 0:
            raise ValueError("grain_scale_px must be >= 0")
        if self.scratch_count < 0:
            raise ValueError("scratch_count must be >= 0")


def distort_points(x_px: np.ndarray, y_px: np.ndarray, intr: Intrinsics):
    """Forward Brown-Conrady: undistorted pixel coords -> distorted coords."""
    xn = (np.asarray(x_px, dtype=np.float64) - intr.cx) / intr.fx
    yn = (np.asarray(y_px, dtype=np.float64) - intr.cy) / intr.fy
    r2 = xn * xn + yn * yn
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 ** 2 + intr.k3 * r2 ** 3
    xd = xn * radial + 2.0 * intr.p1 * xn * yn + intr.p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + intr.p1 * (r2 + 2.0 * yn * yn) + 2.0 * intr.p2 * xn * yn
    return xd * intr.fx + intr.cx, yd * intr.fy + intr.cy


def apply_lens_distortion(capture, intr: Intrinsics):
    """Warp the capture through the forward distortion model.

    Each output pixel looks up the input at its distorted location
    (bilinear); locations falling outside the source become 0. With all
    coefficients zero the image passes through untouched.
    """
    img, wrap = _unwrap(capture)
    if not all(np.isfinite(c) for c in intr.distortion):
        raise ValueError("distortion coefficients must be finite")
    if not intr.has_distortion():
        return capture
    h, w = img.shape
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    xd, yd = distort_points(uu, vv, intr)
    out = sample_bilinear(img, xd, yd)
    return wrap(out)


def apply_sensor_noise(capture, cfg: NoiseConfig, bit_depth: int = 10):
    """Add grain, scratches and i.i.d. noise, then quantize to the ADC grid.

    Grain is a multiplicative unit-variance field; a grain_scale_px above
    zero correlates it over that radius (speckle-like blobs that perturb
    projected dots coherently instead of averaging out inside matching
    windows).
    """
    img, wrap = _unwrap(capture)
    rng = np.random.default_rng(cfg.seed)
    out = img.astype(np.float64, copy=True)
    h, w = out.shape

    if cfg.grain_sigma > 0:
        field = rng.standard_normal((h, w))
        if cfg.grain_scale_px > 0:
            from scipy import ndimage
            field = ndimage.gaussian_filter(field, cfg.grain_scale_px, mode="wrap")
            field /= field.std()
        out *= 1.0 + cfg.grain_sigma * field

    for _ in range(cfg.scratch_count):
        x0, x1 = rng.uniform(0, w - 1, size=2)
        y0, y1 = rng.uniform(0, h - 1, size=2)
        strength = rng.uniform(0.2, 0.6)
        sigma_w = rng.uniform(0.5, 1.0)
        out *= 1.0 - strength * _segment_profile(w, h, x0, y0, x1, y1, sigma_w)

    if cfg.gaussian_sigma > 0:
        out += cfg.gaussian_sigma * rng.standard_normal((h, w))

    return wrap(quantize_bits(out, bit_depth))


def _segment_profile(w, h, x0, y0, x1, y1, sigma):
    """Gaussian cross-section profile of a line segment, full-frame field."""
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx, dy = x1 - x0, y1 - y0
    len2 = dx * dx + dy * dy
    if len2 < 1e-12:
        d2 = (uu - x0) ** 2 + (vv - y0) ** 2
    else:
        t = np.clip(((uu - x0) * dx + (vv - y0) * dy) / len2, 0.0, 1.0)
        d2 = (uu - (x0 + t * dx)) ** 2 + (vv - (y0 + t * dy)) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def _unwrap(capture):
    """Accept IrCapture or a bare array; return (array, rewrap function)."""
    if isinstance(capture, IrCapture):
        return capture.image, lambda img: IrCapture(img, capture.poses, capture.timestamps)
    return np.asarray(capture, dtype=np.float64), lambda img: img
