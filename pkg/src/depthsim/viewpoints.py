"""Camera viewpoint sampling over the viewing sphere of a target."""

from __future__ import annotations

import numpy as np

from .geometry import RigidTransform, look_at

ICOSPHERE = "icosphere"
RANDOM = "random"


def icosphere_vertices(subdivision: int = 0) -> np.ndarray:
    """Unit icosahedron vertices, optionally Loop-subdivided on the sphere.

    Vertex counts: 12, 42, 162, 642, ...
    """
    if subdivision < 0:
        raise ValueError("subdivision must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivision):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts)


def sample_viewpoints(mode: str, *, count: int | None = None, subdivision: int = 0,
                      radius_range: tuple[float, float] = (1.0, 2.0),
                      seed: int = 0, target=(0.0, 0.0, 0.0),
                      up=(0.0, 0.0, 1.0), cap_deg: float = 180.0) -> list[RigidTransform]:
    """Camera poses on the viewing sphere, optical axes through `target`.

    icosphere: poses at the subdivided-icosahedron vertices, all at the
    mid radius of `radius_range`. random: directions uniform over the
    spherical cap of half-angle `cap_deg` about `up`, radii uniform in
    `radius_range`. Deterministic per seed.
    """
    lo, hi = float(radius_range[0]), float(radius_range[1])
    if not 0 < lo <= hi:
        raise ValueError("empty or invalid radius range")
    target = np.asarray(target, dtype=np.float64)
    up_v = np.asarray(up, dtype=np.float64)
    up_v = up_v / np.linalg.norm(up_v)

    if mode == ICOSPHERE:
        dirs = icosphere_vertices(subdivision)
        radii = np.full(len(dirs), (lo + hi) / 2.0)
    elif mode == RANDOM:
        if count is None or count < 1:
            raise ValueError("random mode needs a positive count")
        rng = np.random.default_rng(seed)
        cos_min = np.cos(np.radians(min(max(cap_deg, 0.0), 180.0)))
        cos_t = rng.uniform(cos_min, 1.0, size=count)
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
        phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
        local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
        basis = _orthobasis(up_v)
        dirs = local @ basis.T
        radii = rng.uniform(lo, hi, size=count)
    else:
        raise ValueError(f"unknown viewpoint mode '{mode}'")

    poses = []
    for direction, r in zip(dirs, radii):
        eye = target + r * direction
        poses.append(look_at(eye, target, up=up_v))
    return poses


def _orthobasis(z: np.ndarray) -> np.ndarray:
    """Right-handed basis whose third column is z."""
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, z)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
