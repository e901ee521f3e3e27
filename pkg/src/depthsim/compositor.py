"""Background composition: primitive clutter and real-scan blending.

Geometric backgrounds (floors, clutter) are added to the scene before
rendering so they interact with the projected pattern (shadows,
occlusion). Real captured scans carry no pattern information, so they
are composed after reconstruction with occlusion-correct minimum-depth
blending.
"""

from __future__ import annotations

import numpy as np

from .geometry import RigidTransform, quaternion_to_matrix
from .matcher import DepthMap
from .scene import Instance, Material, Scene, make_box, make_cylinder, make_sphere

_MAX_PLACEMENT_TRIES = 1000


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    return quaternion_to_matrix(q / np.linalg.norm(q))


def add_primitive_clutter(scene: Scene, count: int, bounds, seed: int,
                          target_index: int | None = 0) -> Scene:
    """Scatter `count` random boxes/spheres/cylinders inside an AABB.

    bounds: ((x0, y0, z0), (x1, y1, z1)) world box that must contain every
    primitive. Primitives whose bounding box would overlap the target
    instance (by default the first one in the scene) are re-rolled.
    Deterministic per seed; the input scene is modified in place and
    returned.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("degenerate clutter bounds")
    if count == 0:
        return scene

    target_lo = target_hi = None
    if target_index is not None and scene.instances:
        target_lo, target_hi = scene.instances[target_index].world_bounds()

    rng = np.random.default_rng(seed)
    extent = hi - lo
    max_size = float(min(extent.min() / 2.0, 0.4))
    min_size = max_size / 6.0

    for _ in range(count):
        placed = False
        for _attempt in range(_MAX_PLACEMENT_TRIES):
            kind = rng.integers(0, 3)
            size = rng.uniform(min_size, max_size, size=3)
            if kind == 0:
                mesh = make_box(*size)
            elif kind == 1:
                mesh = make_sphere(size[0] / 2.0)
            else:
                mesh = make_cylinder(size[0] / 2.0, size[1])
            rot = _random_rotation(rng)
            pos = rng.uniform(lo, hi)
            pose = RigidTransform(rot, pos)
            material = Material(albedo=float(rng.uniform(0.3, 0.95)),
                                reflectance_ratio=float(rng.uniform(0.0, 0.3)),
                                roughness=float(rng.uniform(0.3, 1.0)))
            inst = Instance(mesh, pose, material)
            blo, bhi = inst.world_bounds()
            if np.any(blo < lo) or np.any(bhi > hi):
                continue
            if target_lo is not None and _aabb_overlap(blo, bhi, target_lo, target_hi):
                continue
            scene.instances.append(inst)
            placed = True
            break
        if not placed:
            raise RuntimeError(
                f"could not place clutter primitive inside bounds after "
                f"{_MAX_PLACEMENT_TRIES} tries")
    return scene


def _aabb_overlap(alo, ahi, blo, bhi) -> bool:
    return bool(np.all(ahi >= blo) and np.all(bhi >= alo))


def blend_real_background(depth: DepthMap, background: DepthMap) -> DepthMap:
    """Occlusion-correct z-composite: nearest valid layer wins per pixel."""
    if depth.values.shape != background.values.shape:
        raise ValueError("foreground/background resolution mismatch")
    fg = np.where(depth.valid, depth.values, np.inf)
    bg = np.where(background.valid, background.values, np.inf)
    out = np.minimum(fg, bg)
    valid = np.isfinite(out)
    return DepthMap(np.where(valid, out, np.nan), valid)
