"""Ray-scene intersection: world-space triangle soup + median-split BVH.

The accelerator bakes all posed instances into flat arrays (triangle
edges, per-corner shading normals, material table indices, optional UVs)
and answers nearest-hit / occlusion queries through numba kernels. It is
immutable after construction, so any number of threads may query it
concurrently. Results are identical to brute-force iteration over all
triangles; a brute-force kernel is kept alongside for small scenes and
for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .geometry import RigidTransform
from .scene import Material, Scene

HIT_EPS = 1e-6       # minimum accepted hit distance (meters)
_LEAF_SIZE = 4
_MAX_DEPTH = 48


# ---------------------------------------------------------------------------
# numba kernels


@njit(inline="always", cache=True)
def _ray_box(ox, oy, oz, ix, iy, iz, bmin, bmax, t_best):
    """Slab test; returns True when the box may contain a closer hit."""
    tx1 = (bmin[0] - ox) * ix
    tx2 = (bmax[0] - ox) * ix
    tmin = min(tx1, tx2)
    tmax = max(tx1, tx2)
    ty1 = (bmin[1] - oy) * iy
    ty2 = (bmax[1] - oy) * iy
    tmin = max(tmin, min(ty1, ty2))
    tmax = min(tmax, max(ty1, ty2))
    tz1 = (bmin[2] - oz) * iz
    tz2 = (bmax[2] - oz) * iz
    tmin = max(tmin, min(tz1, tz2))
    tmax = min(tmax, max(tz1, tz2))
    return tmax >= max(tmin, 0.0) and tmin < t_best


@njit(inline="always", cache=True)
def _ray_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2):
    """Moller-Trumbore; returns (t, bu, bv) or t = -1 on miss."""
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if -1e-12 < det < 1e-12:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    bu = (sx * px + sy * py + sz * pz) * inv
    if bu < 0.0 or bu > 1.0:
        return -1.0, 0.0, 0.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    bv = (dx * qx + dy * qy + dz * qz) * inv
    if bv < 0.0 or bu + bv > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= HIT_EPS:
        return -1.0, 0.0, 0.0
    return t, bu, bv


@njit(cache=True, parallel=True)
def _kernel_nearest(origins, dirs, nodes_min, nodes_max, node_left, node_right,
                    node_start, node_count, perm, tv0, te1, te2,
                    out_t, out_tri, out_bu, out_bv):
    n_rays = origins.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        t_best = np.inf
        tri_best = -1
        bu_best = 0.0
        bv_best = 0.0
        stack = np.empty(_MAX_DEPTH + 2, dtype=np.int64)
        sp = 0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(ox, oy, oz, ix, iy, iz,
                            nodes_min[node], nodes_max[node], t_best):
                continue
            cnt = node_count[node]
            if cnt > 0:
                start = node_start[node]
                for k in range(start, start + cnt):
                    tri = perm[k]
                    t, bu, bv = _ray_triangle(ox, oy, oz, dx, dy, dz,
                                              tv0[tri], te1[tri], te2[tri])
                    if t > 0.0 and t < t_best:
                        t_best = t
                        tri_best = tri
                        bu_best = bu
                        bv_best = bv
            else:
                stack[sp] = node_left[node]
                stack[sp + 1] = node_right[node]
                sp += 2
        out_t[r] = t_best
        out_tri[r] = tri_best
        out_bu[r] = bu_best
        out_bv[r] = bv_best


@njit(cache=True, parallel=True)
def _kernel_occluded(origins, dirs, max_dists, nodes_min, nodes_max, node_left,
                     node_right, node_start, node_count, perm, tv0, te1, te2,
                     out_occ):
    n_rays = origins.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        limit = max_dists[r]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        hit = False
        stack = np.empty(_MAX_DEPTH + 2, dtype=np.int64)
        stack[0] = 0
        sp = 1
        while sp > 0 and not hit:
            sp -= 1
            node = stack[sp]
            if not _ray_box(ox, oy, oz, ix, iy, iz,
                            nodes_min[node], nodes_max[node], limit):
                continue
            cnt = node_count[node]
            if cnt > 0:
                start = node_start[node]
                for k in range(start, start + cnt):
                    tri = perm[k]
                    t, bu, bv = _ray_triangle(ox, oy, oz, dx, dy, dz,
                                              tv0[tri], te1[tri], te2[tri])
                    if 0.0 < t < limit:
                        hit = True
                        break
            else:
                stack[sp] = node_left[node]
                stack[sp + 1] = node_right[node]
                sp += 2
        out_occ[r] = hit


@njit(cache=True, parallel=True)
def _kernel_nearest_brute(origins, dirs, tv0, te1, te2,
                          out_t, out_tri, out_bu, out_bv):
    n_rays = origins.shape[0]
    n_tris = tv0.shape[0]
    for r in prange(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t_best = np.inf
        tri_best = -1
        bu_best = 0.0
        bv_best = 0.0
        for tri in range(n_tris):
            t, bu, bv = _ray_triangle(ox, oy, oz, dx, dy, dz,
                                      tv0[tri], te1[tri], te2[tri])
            if t > 0.0 and t < t_best:
                t_best = t
                tri_best = tri
                bu_best = bu
                bv_best = bv
        out_t[r] = t_best
        out_tri[r] = tri_best
        out_bu[r] = bu_best
        out_bv[r] = bv_best


# ---------------------------------------------------------------------------
# build


@dataclass
class Hit:
    point: np.ndarray
    normal: np.ndarray      # geometric normal, oriented toward the ray origin
    material: Material
    distance: float
    triangle: int


class AcceleratedScene:
    """Flattened scene with a BVH over world-space triangles."""

    def __init__(self, scene: Scene):
        self.scene = scene
        tv0 = []
        te1 = []
        te2 = []
        sn = []            # (M, 3, 3) per-corner shading normals
        tri_mat = []
        tri_uv = []
        tri_nmap = []      # normal-map texture index per triangle, -1 = none
        tri_amap = []      # albedo-map texture index per triangle, -1 = none
        self.normal_maps: list[np.ndarray] = []
        self.albedo_maps: list[np.ndarray] = []
        materials: list[Material] = []

        for inst in scene.instances:
            mesh = inst.mesh
            if mesh.n_triangles == 0:
                continue
            mat_id = len(materials)
            materials.append(inst.material)
            verts = inst.pose.apply(mesh.vertices)
            tris = mesh.triangles
            v0 = verts[tris[:, 0]]
            v1 = verts[tris[:, 1]]
            v2 = verts[tris[:, 2]]
            tv0.append(v0)
            te1.append(v1 - v0)
            te2.append(v2 - v0)
            if mesh.vertex_normals is not None:
                wn = inst.pose.apply_direction(mesh.vertex_normals)
                sn.append(np.stack([wn[tris[:, 0]], wn[tris[:, 1]], wn[tris[:, 2]]], axis=1))
            else:
                fn = np.cross(v1 - v0, v2 - v0)
                ln = np.linalg.norm(fn, axis=1)
                ln[ln == 0] = 1.0
                fn = fn / ln[:, None]
                sn.append(np.repeat(fn[:, None, :], 3, axis=1))
            tri_mat.append(np.full(len(tris), mat_id, dtype=np.int32))

            nmap_id = -1
            if mesh.normal_map is not None and mesh.face_uvs is not None:
                nmap_id = len(self.normal_maps)
                self.normal_maps.append(np.asarray(mesh.normal_map, dtype=np.float64))
            amap_id = -1
            if inst.material.albedo_map is not None and mesh.face_uvs is not None:
                amap_id = len(self.albedo_maps)
                self.albedo_maps.append(np.asarray(inst.material.albedo_map, dtype=np.float64))
            if mesh.face_uvs is not None:
                tri_uv.append(mesh.face_uvs)
            else:
                tri_uv.append(np.zeros((len(tris), 3, 2)))
            tri_nmap.append(np.full(len(tris), nmap_id, dtype=np.int32))
            tri_amap.append(np.full(len(tris), amap_id, dtype=np.int32))

        if tv0:
            self.tri_v0 = np.ascontiguousarray(np.concatenate(tv0))
            self.tri_e1 = np.ascontiguousarray(np.concatenate(te1))
            self.tri_e2 = np.ascontiguousarray(np.concatenate(te2))
            self.tri_shading_normals = np.ascontiguousarray(np.concatenate(sn))
            self.tri_material = np.concatenate(tri_mat)
            self.tri_uv = np.ascontiguousarray(np.concatenate(tri_uv))
            self.tri_normal_map = np.concatenate(tri_nmap)
            self.tri_albedo_map = np.concatenate(tri_amap)
        else:
            self.tri_v0 = np.zeros((0, 3))
            self.tri_e1 = np.zeros((0, 3))
            self.tri_e2 = np.zeros((0, 3))
            self.tri_shading_normals = np.zeros((0, 3, 3))
            self.tri_material = np.zeros(0, dtype=np.int32)
            self.tri_uv = np.zeros((0, 3, 2))
            self.tri_normal_map = np.zeros(0, dtype=np.int32)
            self.tri_albedo_map = np.zeros(0, dtype=np.int32)

        self.materials = materials
        self.mat_albedo = np.array([m.albedo for m in materials] or [0.0])
        self.mat_reflectance = np.array([m.reflectance_ratio for m in materials] or [0.0])
        self.mat_roughness = np.array([m.roughness for m in materials] or [1.0])

        gn = np.cross(self.tri_e1, self.tri_e2)
        ln = np.linalg.norm(gn, axis=1)
        ln[ln == 0] = 1.0
        self.tri_geom_normal = gn / ln[:, None]

        self._build_bvh()

    @property
    def n_triangles(self) -> int:
        return int(self.tri_v0.shape[0])

    def _build_bvh(self):
        n = self.n_triangles
        if n == 0:
            self.nodes_min = np.zeros((1, 3))
            self.nodes_max = np.zeros((1, 3))
            self.node_left = np.zeros(1, dtype=np.int64)
            self.node_right = np.zeros(1, dtype=np.int64)
            self.node_start = np.zeros(1, dtype=np.int64)
            self.node_count = np.zeros(1, dtype=np.int64)
            self.perm = np.zeros(0, dtype=np.int64)
            return
        lo = np.minimum(np.minimum(self.tri_v0, self.tri_v0 + self.tri_e1),
                        self.tri_v0 + self.tri_e2)
        hi = np.maximum(np.maximum(self.tri_v0, self.tri_v0 + self.tri_e1),
                        self.tri_v0 + self.tri_e2)
        centroids = 0.5 * (lo + hi)
        perm = np.arange(n, dtype=np.int64)

        nodes_min = []
        nodes_max = []
        node_left = []
        node_right = []
        node_start = []
        node_count = []

        def new_node():
            nodes_min.append(np.zeros(3))
            nodes_max.append(np.zeros(3))
            node_left.append(-1)
            node_right.append(-1)
            node_start.append(0)
            node_count.append(0)
            return len(nodes_min) - 1

        root = new_node()
        stack = [(root, 0, n, 0)]
        while stack:
            idx, start, count, depth = stack.pop()
            sel = perm[start:start + count]
            nodes_min[idx] = lo[sel].min(axis=0)
            nodes_max[idx] = hi[sel].max(axis=0)
            if count <= _LEAF_SIZE or depth >= _MAX_DEPTH - 2:
                node_start[idx] = start
                node_count[idx] = count
                continue
            cmin = centroids[sel].min(axis=0)
            cmax = centroids[sel].max(axis=0)
            axis = int(np.argmax(cmax - cmin))
            order = np.argsort(centroids[sel, axis], kind="stable")
            perm[start:start + count] = sel[order]
            mid = count // 2
            left = new_node()
            right = new_node()
            node_left[idx] = left
            node_right[idx] = right
            stack.append((left, start, mid, depth + 1))
            stack.append((right, start + mid, count - mid, depth + 1))

        self.nodes_min = np.ascontiguousarray(nodes_min)
        self.nodes_max = np.ascontiguousarray(nodes_max)
        self.node_left = np.asarray(node_left, dtype=np.int64)
        self.node_right = np.asarray(node_right, dtype=np.int64)
        self.node_start = np.asarray(node_start, dtype=np.int64)
        self.node_count = np.asarray(node_count, dtype=np.int64)
        self.perm = perm

    # -- queries ------------------------------------------------------------

    def intersect_batch(self, origins: np.ndarray, dirs: np.ndarray):
        """Nearest hit per ray: (t, triangle, bary_u, bary_v); t = inf on miss."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        n = origins.shape[0]
        out_t = np.empty(n)
        out_tri = np.empty(n, dtype=np.int64)
        out_bu = np.empty(n)
        out_bv = np.empty(n)
        if self.n_triangles == 0:
            out_t[:] = np.inf
            out_tri[:] = -1
            out_bu[:] = 0.0
            out_bv[:] = 0.0
            return out_t, out_tri, out_bu, out_bv
        _kernel_nearest(origins, dirs, self.nodes_min, self.nodes_max,
                        self.node_left, self.node_right, self.node_start,
                        self.node_count, self.perm, self.tri_v0, self.tri_e1,
                        self.tri_e2, out_t, out_tri, out_bu, out_bv)
        return out_t, out_tri, out_bu, out_bv

    def occluded_batch(self, origins: np.ndarray, dirs: np.ndarray,
                       max_dists: np.ndarray) -> np.ndarray:
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        max_dists = np.ascontiguousarray(max_dists, dtype=np.float64).reshape(-1)
        out = np.zeros(origins.shape[0], dtype=np.bool_)
        if self.n_triangles == 0:
            return out
        _kernel_occluded(origins, dirs, max_dists, self.nodes_min, self.nodes_max,
                         self.node_left, self.node_right, self.node_start,
                         self.node_count, self.perm, self.tri_v0, self.tri_e1,
                         self.tri_e2, out)
        return out

    def intersect(self, origin, direction) -> Hit | None:
        """Nearest hit along a single ray; direction must be unit length."""
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        nd = np.linalg.norm(d)
        if abs(nd - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        t, tri, bu, bv = self.intersect_batch(
            np.asarray(origin, dtype=np.float64).reshape(1, 3), d.reshape(1, 3))
        if tri[0] < 0:
            return None
        i = int(tri[0])
        point = np.asarray(origin, dtype=np.float64) + t[0] * d
        normal = self.tri_geom_normal[i].copy()
        if np.dot(normal, d) > 0:
            normal = -normal
        return Hit(point=point, normal=normal, material=self.materials[self.tri_material[i]],
                   distance=float(t[0]), triangle=i)


def build_accelerator(scene: Scene) -> AcceleratedScene:
    """Bake a scene into an immutable, query-ready acceleration structure."""
    return AcceleratedScene(scene)


def intersect_brute_force(accel: AcceleratedScene, origins, dirs):
    """Reference nearest-hit by iterating every triangle (no BVH)."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    out_t = np.full(n, np.inf)
    out_tri = np.full(n, -1, dtype=np.int64)
    out_bu = np.zeros(n)
    out_bv = np.zeros(n)
    if accel.n_triangles:
        _kernel_nearest_brute(origins, dirs, accel.tri_v0, accel.tri_e1,
                              accel.tri_e2, out_t, out_tri, out_bu, out_bv)
    return out_t, out_tri, out_bu, out_bv
