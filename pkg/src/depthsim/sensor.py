"""Device description: optics, emitter pattern and matching parameters.

A :class:`SensorModel` bundles camera and projector intrinsics, the
baseline separating them, the projected dot pattern, the operational
depth range and the block-matching parameters. The projector sits at
``-baseline`` along the camera x axis for horizontal stereo (y axis for
vertical), so pattern features shift toward +x in the capture as
surfaces come closer, and disparity ``d = f * b / z`` is positive across
the whole depth range.

Matching runs against a reference image: the pattern as the camera
would see it on a fronto-parallel plane at a canonical distance (close
to twice the near limit; the exact value is snapped so that the
disparity offset of the reference plane falls on the subpixel grid and
reconstructed depths stay on the representable set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imageops import sample_bilinear

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics with Brown-Conrady distortion coefficients."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")

    @property
    def distortion(self) -> tuple[float, float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.p1, self.p2)

    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.distortion)


@dataclass(frozen=True)
class Pattern:
    """Square single-channel emitter pattern with values in [0, 1]."""

    image: np.ndarray
    side_px: int = 0

    def __post_init__(self):
        img = np.ascontiguousarray(self.image, dtype=np.float64)
        if img.ndim != 2 or img.shape[0] != img.shape[1]:
            raise ValueError("pattern must be a square 2D grid")
        if img.size == 0:
            raise ValueError("pattern is empty")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("pattern values outside [0, 1]")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "side_px", int(img.shape[0]))


def pad_pattern_square(raw: np.ndarray) -> Pattern:
    """Center a non-square intensity grid on a zero square canvas."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise ValueError("pattern grid must be 2D and non-empty")
    h, w = raw.shape
    side = max(h, w)
    out = np.zeros((side, side), dtype=np.float64)
    r0 = (side - h) // 2
    c0 = (side - w) // 2
    out[r0:r0 + h, c0:c0 + w] = raw
    return Pattern(out)


def generate_dot_pattern(side_px: int, dot_density: float, seed: int,
                         window_size: int = 9, dot_size_px: int = 1) -> Pattern:
    """Seeded binary dot pattern with best-effort local window uniqueness.

    Dots are i.i.d. Bernoulli(dot_density) cells of dot_size_px x
    dot_size_px pixels (the lit fraction stays dot_density regardless of
    dot size). A hashing pass then looks for identical window_size x
    window_size blocks sharing a horizontal strip (which would be
    ambiguous for epipolar matching) and re-rolls single cells inside
    collisions, for a few rounds.
    """
    if side_px < 64:
        raise ValueError("side_px must be >= 64")
    if not 0.0 < dot_density < 0.5:
        raise ValueError("dot_density must be in (0, 0.5)")
    if dot_size_px < 1:
        raise ValueError("dot_size_px must be >= 1")
    rng = np.random.default_rng(seed)
    coarse = -(-side_px // dot_size_px)  # ceil
    cells = rng.random((coarse, coarse)) < dot_density

    w = int(window_size)
    coarse_w = max(-(-w // dot_size_px), 2)
    if coarse_w >= 2 and coarse > 2 * coarse_w:
        weights = rng.integers(1, 2 ** 56, size=(coarse_w, coarse_w), dtype=np.int64)
        for _round in range(3):
            dup_y, dup_x = _duplicate_windows(cells, weights, coarse_w)
            if len(dup_y) == 0:
                break
            # redistribute one cell per collision with a fresh density draw,
            # keeping the lit fraction unbiased
            flat = rng.integers(0, coarse_w * coarse_w, size=len(dup_y))
            fresh = rng.random(len(dup_y)) < dot_density
            cells[dup_y + flat // coarse_w, dup_x + flat % coarse_w] = fresh

    bits = np.kron(cells, np.ones((dot_size_px, dot_size_px), dtype=bool))
    return Pattern(bits[:side_px, :side_px].astype(np.float64))


def _duplicate_windows(bits: np.ndarray, weights: np.ndarray, w: int):
    """Top-left corners of textured windows that collide inside their strip.

    Windows with fewer than 2 lit cells are skipped: they cannot pass the
    matcher's texture gate, so duplicates among them are harmless (and
    unavoidable at low densities).
    """
    side = bits.shape[0]
    n = side - w + 1
    b64 = bits.astype(np.int64)
    hashes = np.zeros((n, n), dtype=np.int64)
    lit = np.zeros((n, n), dtype=np.int64)
    for j in range(w):
        for i in range(w):
            block = b64[j:j + n, i:i + n]
            hashes += weights[j, i] * block
            lit += block
    textured = lit >= 2
    ys: list[int] = []
    xs: list[int] = []
    order = np.argsort(hashes, axis=1, kind="stable")
    sorted_h = np.take_along_axis(hashes, order, axis=1)
    sorted_tex = np.take_along_axis(textured, order, axis=1)
    dup_mask = (sorted_h[:, 1:] == sorted_h[:, :-1]) & sorted_tex[:, 1:] & sorted_tex[:, :-1]
    strip_rows = np.nonzero(dup_mask.any(axis=1))[0]
    for y in strip_rows:
        cols = order[y, 1:][dup_mask[y]]
        for x in cols:
            ys.append(int(y))
            xs.append(int(x))
    return np.asarray(ys, dtype=np.int64), np.asarray(xs, dtype=np.int64)


@dataclass
class SensorModel:
    """Complete description of a simulated structured-light device."""

    camera: Intrinsics
    projector: Intrinsics
    baseline_m: float
    pattern: Pattern
    orientation: str = HORIZONTAL
    depth_range_m: tuple[float, float] = (0.4, 8.0)
    window_size_px: int = 9
    subpixel_denominator: int = 8
    ir_bit_depth: int = 10
    projector_power: float = 1.0  # reflected intensity of a facing white diffuse surface at 1 m
    emitter_psf_px: float = 0.0   # Gaussian optics blur applied to the pattern
    _reference_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.baseline_m <= 0:
            raise ValueError("baseline_m must be positive")
        z_min, z_max = self.depth_range_m
        if not 0 < z_min < z_max:
            raise ValueError("depth range must satisfy 0 < z_min < z_max")
        if self.window_size_px < 3 or self.window_size_px % 2 == 0:
            raise ValueError("window_size_px must be odd and >= 3")
        if self.subpixel_denominator < 1:
            raise ValueError("subpixel_denominator must be >= 1")
        if self.orientation not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown orientation '{self.orientation}'")
        if not 1 <= self.ir_bit_depth <= 16:
            raise ValueError("ir_bit_depth must be in [1, 16]")
        if self.projector_power <= 0:
            raise ValueError("projector_power must be positive")
        if self.emitter_psf_px < 0:
            raise ValueError("emitter_psf_px must be >= 0")
        if self.emitter_psf_px > 0:
            from scipy import ndimage
            blurred = ndimage.gaussian_filter(self.pattern.image,
                                              self.emitter_psf_px, mode="nearest")
            self.pattern = Pattern(np.clip(blurred, 0.0, 1.0))

    # -- derived geometry -----------------------------------------------------

    @property
    def epipolar_focal_px(self) -> float:
        """Focal length along the epipolar axis (what converts d to z)."""
        return self.camera.fx if self.orientation == HORIZONTAL else self.camera.fy

    @property
    def disparity_bounds_px(self) -> tuple[float, float]:
        """(d_min, d_max) implied by the operational depth range."""
        fb = self.epipolar_focal_px * self.baseline_m
        z_min, z_max = self.depth_range_m
        return fb / z_max, fb / z_min

    @property
    def reference_offset_px(self) -> float:
        """Disparity of the canonical reference plane, on the subpixel grid.

        Close to the disparity of a plane at twice the near limit. The
        fractional part is pinned at 5/8 of a pixel: an interior phase
        that keeps typical working distances away from the integer and
        half-step boundaries of the subpixel estimator, where snap
        flicker concentrates (empirically the flattest error profile
        across the operational range).
        """
        fb = self.epipolar_focal_px * self.baseline_m
        s = self.subpixel_denominator
        whole = np.floor(fb / (2.0 * self.depth_range_m[0]))
        return (whole * s + np.rint(0.625 * s)) / s

    @property
    def reference_plane_m(self) -> float:
        """Distance of the canonical reference plane (close to 2 * z_min)."""
        fb = self.epipolar_focal_px * self.baseline_m
        return fb / self.reference_offset_px

    def projector_offset_local(self) -> np.ndarray:
        """Projector center in the camera frame."""
        if self.orientation == HORIZONTAL:
            return np.array([-self.baseline_m, 0.0, 0.0])
        return np.array([0.0, -self.baseline_m, 0.0])

    def search_pads_px(self) -> tuple[int, int]:
        """Reference padding along the epipolar axis covering the search range.

        The emitter field extends beyond the camera's view, so the stored
        matching reference can cover every offset the depth range allows;
        without it, pixels near two image edges could never match.
        """
        d_min, d_max = self.disparity_bounds_px
        d0 = self.reference_offset_px
        lo = int(np.floor(d_min - d0))
        hi = int(np.ceil(d_max - d0))
        return max(0, -lo), max(0, hi)

    # -- reference image ------------------------------------------------------

    def reference_image(self) -> np.ndarray:
        """Matching reference, padded along the epipolar axis (cached).

        Same pixel scale and rows as the camera; wider (taller for
        vertical stereo) by the search-range pads so that every disparity
        in the operational range stays matchable across the whole frame.
        """
        if self._reference_cache is None:
            pl, pr = self.search_pads_px()
            self._reference_cache = render_reference_image(self, pad_before=pl,
                                                           pad_after=pr)
        return self._reference_cache


def render_reference_image(sensor: SensorModel, pad_before: int = 0,
                           pad_after: int = 0) -> np.ndarray:
    """Resample the emitter pattern through projector->camera geometry.

    Models an ideal fronto-parallel surface at the canonical reference
    distance: each camera pixel ray is intersected with that plane and the
    point is projected back into the pattern, giving the matching target
    the device would store. Deterministic; no shading applied.

    With zero pads the grid is exactly the camera resolution. Pads extend
    the grid along the epipolar axis (columns for horizontal stereo, rows
    for vertical) into the emitter field beyond the camera's view.
    """
    cam = sensor.camera
    proj = sensor.projector
    z_ref = sensor.reference_plane_m
    b = sensor.baseline_m
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    if sensor.orientation == HORIZONTAL:
        u = np.arange(-pad_before, cam.width + pad_after, dtype=np.float64)
    else:
        v = np.arange(-pad_before, cam.height + pad_after, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    x_over_z = (uu - cam.cx) / cam.fx
    y_over_z = (vv - cam.cy) / cam.fy
    if sensor.orientation == HORIZONTAL:
        px = proj.fx * (x_over_z + b / z_ref) + proj.cx
        py = proj.fy * y_over_z + proj.cy
    else:
        px = proj.fx * x_over_z + proj.cx
        py = proj.fy * (y_over_z + b / z_ref) + proj.cy
    return sample_bilinear(sensor.pattern.image, px, py)


def kinect_preset(pattern: Pattern | None = None, pattern_seed: int = 20177,
                  **overrides) -> SensorModel:
    """Default device: VGA camera, f = 580 px, 75 mm baseline, 0.4-8 m range.

    The projector covers a wider field of view than the camera so that the
    reference stays textured across the full disparity search range.
    """
    cam = Intrinsics(fx=580.0, fy=580.0, cx=319.5, cy=239.5, width=640, height=480)
    side = 1280
    proj = Intrinsics(fx=840.0, fy=840.0, cx=(side - 1) / 2.0, cy=(side - 1) / 2.0,
                      width=side, height=side)
    if pattern is None:
        pattern = generate_dot_pattern(side, 0.2, pattern_seed, dot_size_px=2)
    params = dict(
        camera=cam,
        projector=proj,
        baseline_m=0.075,
        pattern=pattern,
        orientation=HORIZONTAL,
        depth_range_m=(0.4, 8.0),
        window_size_px=9,
        subpixel_denominator=8,
        ir_bit_depth=10,
        projector_power=2.0,
        emitter_psf_px=0.8,
    )
    params.update(overrides)
    return SensorModel(**params)
