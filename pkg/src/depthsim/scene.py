"""Scene description: triangle meshes, materials, lights and posed instances.

Meshes are plain numpy containers. Loaders accept OBJ, PLY (ascii and
binary little-endian) and STL (ascii and binary); degenerate (zero-area)
triangles are dropped and counted, and per-vertex normals are computed
from faces when the file carries none. All geometry is in meters; apply a
scale factor at load time for assets authored in other units.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RigidTransform

logger = logging.getLogger(__name__)

_DEGENERATE_AREA = 1e-14
_NORMAL_TOL = 1e-6


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed; message names the location."""


@dataclass
class Mesh:
    """Indexed triangle mesh.

    vertices: (N, 3) float64 positions in meters.
    triangles: (M, 3) int32 vertex indices.
    vertex_normals: optional (N, 3) unit normals; when absent, shading
        falls back to flat per-face normals.
    face_uvs: optional (M, 3, 2) per-corner texture coordinates.
    normal_map: optional (Ht, Wt, 3) tangent-space normal texture in
        [0, 1] (decoded as 2*v - 1), used only when face_uvs is present.
    degenerate_dropped: number of zero-area triangles removed at ingest.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray | None = None
    face_uvs: np.ndarray | None = None
    normal_map: np.ndarray | None = None
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh vertices contain NaN/inf")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")
        if self.vertex_normals is not None:
            vn = np.ascontiguousarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            if vn.shape[0] != self.vertices.shape[0]:
                raise ValueError("vertex_normals length mismatch")
            norms = np.linalg.norm(vn, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-3):
                # renormalize; reject only truly broken normals
                bad = norms < 1e-12
                if np.any(bad):
                    raise ValueError("zero-length vertex normal")
                vn = vn / norms[:, None]
            self.vertex_normals = vn
        if self.face_uvs is not None:
            self.face_uvs = np.ascontiguousarray(self.face_uvs, dtype=np.float64).reshape(-1, 3, 2)
            if self.face_uvs.shape[0] != self.triangles.shape[0]:
                raise ValueError("face_uvs length mismatch")

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def face_normals(self) -> np.ndarray:
        """Unit normals from the cross product of triangle edges, (M, 3)."""
        v = self.vertices
        t = self.triangles
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        n = np.cross(e1, e2)
        length = np.linalg.norm(n, axis=1)
        length[length == 0.0] = 1.0
        return n / length[:, None]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class Material:
    """Two-lobe reflectance: Lambert diffuse plus a Schlick-weighted specular.

    albedo: diffuse reflectivity in [0, 1].
    reflectance_ratio: fraction of the response that is specular, [0, 1].
    roughness: width of the specular lobe, (0, 1].
    albedo_map: optional grayscale texture in [0, 1] modulating albedo
        through the mesh UVs.
    """

    albedo: float = 0.8
    reflectance_ratio: float = 0.0
    roughness: float = 0.5
    albedo_map: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.albedo <= 1.0:
            raise ValueError("albedo outside [0, 1]")
        if not 0.0 <= self.reflectance_ratio <= 1.0:
            raise ValueError("reflectance_ratio outside [0, 1]")
        if not 0.0 < self.roughness <= 1.0:
            raise ValueError("roughness outside (0, 1]")


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray
    power: float  # irradiance at 1 m on a facing surface

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        if self.power < 0:
            raise ValueError("light power must be >= 0")


@dataclass(frozen=True)
class DirectionalLight:
    direction: np.ndarray  # direction the light travels (toward surfaces)
    irradiance: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("zero light direction")
        object.__setattr__(self, "direction", d / n)
        if self.irradiance < 0:
            raise ValueError("irradiance must be >= 0")


@dataclass
class Instance:
    mesh: Mesh
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    material: Material = field(default_factory=Material)

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.pose.apply(self.mesh.vertices)
        return pts.min(axis=0), pts.max(axis=0)


@dataclass
class Scene:
    instances: list[Instance] = field(default_factory=list)
    ambient_light: float = 0.0
    extra_lights: list = field(default_factory=list)

    def __post_init__(self):
        if self.ambient_light < 0:
            raise ValueError("ambient_light must be >= 0")

    def add(self, mesh: Mesh, pose: RigidTransform | None = None,
            material: Material | None = None) -> Instance:
        inst = Instance(mesh, pose or RigidTransform.identity(), material or Material())
        self.instances.append(inst)
        return inst


# ---------------------------------------------------------------------------
# Loaders


def load_mesh(path, fmt: str | None = None, scale: float = 1.0) -> Mesh:
    """Load a triangle mesh from OBJ, PLY or STL.

    fmt defaults to the file extension. `scale` multiplies all vertex
    coordinates (for assets not authored in meters).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "obj":
        mesh = _load_obj(path)
    elif fmt == "ply":
        mesh = _load_ply(path)
    elif fmt == "stl":
        mesh = _load_stl(path)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh format '{fmt}'")
    if scale != 1.0:
        mesh.vertices *= float(scale)
    return mesh


def _drop_degenerate(vertices: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, int]:
    if len(tris) == 0:
        return tris, 0
    v = vertices
    e1 = v[tris[:, 1]] - v[tris[:, 0]]
    e2 = v[tris[:, 2]] - v[tris[:, 0]]
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    keep = area2 > _DEGENERATE_AREA
    dropped = int((~keep).sum())
    if dropped:
        logger.info("dropped %d degenerate triangle(s)", dropped)
    return tris[keep], dropped


def _load_obj(path: Path) -> Mesh:
    vertices: list[list[float]] = []
    normals: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[tuple] = []  # tuples of (v_idx, vt_idx | None, vn_idx | None)

    def resolve(idx: int, count: int, lineno: int, what: str) -> int:
        if idx > 0:
            j = idx - 1
        elif idx < 0:
            j = count + idx
        else:
            raise MeshFormatError(f"{path}:{lineno}: zero {what} index")
        if not 0 <= j < count:
            raise MeshFormatError(f"{path}:{lineno}: {what} index {idx} out of range")
        return j

    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                elif tag == "vn":
                    normals.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    corners = []
                    for spec in parts[1:]:
                        comps = spec.split("/")
                        vi = resolve(int(comps[0]), len(vertices), lineno, "vertex")
                        ti = ni = None
                        if len(comps) > 1 and comps[1]:
                            ti = resolve(int(comps[1]), len(uvs), lineno, "texcoord")
                        if len(comps) > 2 and comps[2]:
                            ni = resolve(int(comps[2]), len(normals), lineno, "normal")
                        corners.append((vi, ti, ni))
                    if len(corners) < 3:
                        raise MeshFormatError(f"{path}:{lineno}: face with fewer than 3 vertices")
                    for k in range(1, len(corners) - 1):  # fan triangulation
                        faces.append((corners[0], corners[k], corners[k + 1]))
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshFormatError):
                    raise
                raise MeshFormatError(f"{path}:{lineno}: cannot parse '{line}'") from exc

    if not vertices:
        raise MeshFormatError(f"{path}: no vertices found")
    verts = np.asarray(vertices, dtype=np.float64)
    tris_all = np.asarray([[c[0] for c in f] for f in faces], dtype=np.int32).reshape(-1, 3)
    if len(tris_all):
        e1 = verts[tris_all[:, 1]] - verts[tris_all[:, 0]]
        e2 = verts[tris_all[:, 2]] - verts[tris_all[:, 0]]
        keep = np.linalg.norm(np.cross(e1, e2), axis=1) > _DEGENERATE_AREA
    else:
        keep = np.zeros(0, dtype=bool)
    dropped = int((~keep).sum())
    if dropped:
        logger.info("dropped %d degenerate triangle(s) from %s", dropped, path)
    tris = tris_all[keep]

    vert_normals = None
    if normals and all(c[2] is not None for f in faces for c in f):
        # average the referenced file normals onto vertices
        acc = np.zeros_like(verts)
        nrm = np.asarray(normals, dtype=np.float64)
        for f in faces:
            for vi, _, ni in f:
                acc[vi] += nrm[ni]
        lengths = np.linalg.norm(acc, axis=1)
        ok = lengths > 1e-12
        acc[ok] /= lengths[ok][:, None]
        acc[~ok] = np.array([0.0, 0.0, 1.0])
        vert_normals = acc

    face_uvs = None
    if uvs and faces and all(c[1] is not None for f in faces for c in f):
        uv = np.asarray(uvs, dtype=np.float64)
        all_uv = np.asarray([[uv[c[1]] for c in f] for f in faces], dtype=np.float64)
        face_uvs = all_uv[keep]

    return Mesh(verts, tris, vertex_normals=vert_normals, face_uvs=face_uvs,
                degenerate_dropped=dropped)


def _load_ply(path: Path) -> Mesh:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise MeshFormatError(f"{path}:1: missing 'ply' magic")
    try:
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise MeshFormatError(f"{path}: no end_header") from None
    header = data[:header_end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[tuple[str, int, list]] = []  # (name, count, [(type, name) or ('list', ctype, itype, name)])
    current = None
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            current = (parts[1], int(parts[2]), [])
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise MeshFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                current[2].append(("list", parts[2], parts[3], parts[4]))
            else:
                current[2].append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError(f"{path}: unsupported ply format '{fmt}'")

    _SIZES = {"char": "b", "int8": "b", "uchar": "B", "uint8": "B",
              "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
              "int": "i", "int32": "i", "uint": "I", "uint32": "I",
              "float": "f", "float32": "f", "double": "d", "float64": "d"}

    verts = None
    vert_normals = None
    tris: list[list[int]] = []

    if fmt == "ascii":
        body = data[header_end:].decode("ascii", errors="replace").split()
        pos = 0
        for name, count, props in elements:
            if name == "vertex":
                names = [p[1] for p in props]
                width = len(props)
                block = body[pos:pos + count * width]
                if len(block) != count * width:
                    raise MeshFormatError(f"{path}: truncated vertex data")
                arr = np.asarray(block, dtype=np.float64).reshape(count, width)
                pos += count * width
                verts = arr[:, [names.index("x"), names.index("y"), names.index("z")]]
                if all(n in names for n in ("nx", "ny", "nz")):
                    vert_normals = arr[:, [names.index("nx"), names.index("ny"), names.index("nz")]]
            elif name == "face":
                for _ in range(count):
                    n = int(body[pos]); pos += 1
                    idx = [int(x) for x in body[pos:pos + n]]; pos += n
                    for k in range(1, n - 1):
                        tris.append([idx[0], idx[k], idx[k + 1]])
            else:
                # skip unknown fixed-width elements; lists unsupported here
                for p in props:
                    if p[0] == "list":
                        raise MeshFormatError(f"{path}: cannot skip list element '{name}'")
                pos += count * len(props)
    else:
        offset = header_end
        for name, count, props in elements:
            if name == "vertex":
                codes = "".join(_SIZES[p[0]] for p in props)
                names = [p[1] for p in props]
                rec = struct.Struct("<" + codes)
                arr = np.zeros((count, len(props)))
                for i in range(count):
                    vals = rec.unpack_from(data, offset)
                    offset += rec.size
                    arr[i] = vals
                verts = arr[:, [names.index("x"), names.index("y"), names.index("z")]]
                if all(n in names for n in ("nx", "ny", "nz")):
                    vert_normals = arr[:, [names.index("nx"), names.index("ny"), names.index("nz")]]
            elif name == "face":
                for i in range(count):
                    prop = props[0]
                    cs = struct.Struct("<" + _SIZES[prop[1]])
                    n = cs.unpack_from(data, offset)[0]
                    offset += cs.size
                    isz = struct.Struct("<" + str(n) + _SIZES[prop[2]])
                    idx = isz.unpack_from(data, offset)
                    offset += isz.size
                    for k in range(1, n - 1):
                        tris.append([idx[0], idx[k], idx[k + 1]])
            else:
                fixed = sum(struct.calcsize("<" + _SIZES[p[0]]) for p in props if p[0] != "list")
                if any(p[0] == "list" for p in props):
                    raise MeshFormatError(f"{path}: cannot skip list element '{name}'")
                offset += fixed * count

    if verts is None:
        raise MeshFormatError(f"{path}: no vertex element")
    tris_arr = np.asarray(tris, dtype=np.int32).reshape(-1, 3)
    if tris_arr.size and tris_arr.max() >= len(verts):
        raise MeshFormatError(f"{path}: face index out of range")
    tris_arr, dropped = _drop_degenerate(verts, tris_arr)
    if vert_normals is not None:
        lengths = np.linalg.norm(vert_normals, axis=1)
        ok = lengths > 1e-12
        if not np.all(ok):
            vert_normals = None
        else:
            vert_normals = vert_normals / lengths[:, None]
    return Mesh(verts, tris_arr, vertex_normals=vert_normals, degenerate_dropped=dropped)


def _load_stl(path: Path) -> Mesh:
    with open(path, "rb") as fh:
        data = fh.read()
    is_ascii = data[:5] == b"solid" and b"facet" in data[:1024]
    raw_tris = []
    if is_ascii:
        text = data.decode("ascii", errors="replace")
        cur: list[list[float]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "vertex":
                try:
                    cur.append([float(x) for x in parts[1:4]])
                except (ValueError, IndexError):
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex line") from None
            elif parts[0] == "endfacet":
                if len(cur) != 3:
                    raise MeshFormatError(f"{path}:{lineno}: facet with {len(cur)} vertices")
                raw_tris.append(cur)
                cur = []
    else:
        if len(data) < 84:
            raise MeshFormatError(f"{path}: binary STL shorter than header")
        (count,) = struct.unpack_from("<I", data, 80)
        need = 84 + count * 50
        if len(data) < need:
            raise MeshFormatError(f"{path}: binary STL truncated at byte {len(data)} (need {need})")
        rec = np.frombuffer(data, dtype=np.uint8, count=count * 50, offset=84)
        rec = rec.reshape(count, 50)
        floats = rec[:, :48].copy().view("<f4").reshape(count, 12)
        raw_tris = floats[:, 3:12].reshape(count, 3, 3).astype(np.float64)

    raw = np.asarray(raw_tris, dtype=np.float64).reshape(-1, 3, 3)
    # weld duplicate vertices so the index invariants hold
    flat = raw.reshape(-1, 3)
    uniq, inverse = np.unique(flat.round(decimals=9), axis=0, return_inverse=True)
    tris = inverse.reshape(-1, 3).astype(np.int32)
    tris, dropped = _drop_degenerate(uniq, tris)
    return Mesh(uniq, tris, degenerate_dropped=dropped)


# ---------------------------------------------------------------------------
# Procedural primitives (benchmark walls, clutter shapes, test geometry)


def make_plane(width: float, height: float) -> Mesh:
    """Rectangle in the local x-y plane, normal +z, centered at the origin."""
    w, h = width / 2.0, height / 2.0
    verts = np.array([[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    face_uvs = uvs[tris]
    return Mesh(verts, tris, face_uvs=face_uvs)


def make_box(sx: float, sy: float, sz: float) -> Mesh:
    x, y, z = sx / 2.0, sy / 2.0, sz / 2.0
    verts = np.array([
        [-x, -y, -z], [x, -y, -z], [x, y, -z], [-x, y, -z],
        [-x, -y, z], [x, -y, z], [x, y, z], [-x, y, z],
    ])
    tris = np.array([
        [0, 2, 1], [0, 3, 2],   # -z
        [4, 5, 6], [4, 6, 7],   # +z
        [0, 1, 5], [0, 5, 4],   # -y
        [2, 3, 7], [2, 7, 6],   # +y
        [1, 2, 6], [1, 6, 5],   # +x
        [3, 0, 4], [3, 4, 7],   # -x
    ], dtype=np.int32)
    return Mesh(verts, tris)


def make_sphere(radius: float, n_theta: int = 12, n_phi: int = 24) -> Mesh:
    """UV sphere with smooth vertex normals."""
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_theta):
        th = np.pi * i / n_theta
        for j in range(n_phi):
            ph = 2 * np.pi * j / n_phi
            verts.append([
                radius * np.sin(th) * np.cos(ph),
                radius * np.sin(th) * np.sin(ph),
                radius * np.cos(th),
            ])
    verts.append([0.0, 0.0, -radius])
    verts = np.asarray(verts)
    tris = []
    def ring(i, j):
        return 1 + (i - 1) * n_phi + (j % n_phi)
    for j in range(n_phi):  # top cap
        tris.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, c, d])
            tris.append([a, d, b])
    last = len(verts) - 1
    for j in range(n_phi):  # bottom cap
        tris.append([last, ring(n_theta - 1, j + 1), ring(n_theta - 1, j)])
    normals = verts / np.linalg.norm(verts, axis=1)[:, None]
    return Mesh(verts, np.asarray(tris, dtype=np.int32), vertex_normals=normals)


def make_cylinder(radius: float, height: float, n_seg: int = 24) -> Mesh:
    h = height / 2.0
    verts = []
    for z in (-h, h):
        for j in range(n_seg):
            ph = 2 * np.pi * j / n_seg
            verts.append([radius * np.cos(ph), radius * np.sin(ph), z])
    verts.append([0.0, 0.0, -h])
    verts.append([0.0, 0.0, h])
    verts = np.asarray(verts)
    tris = []
    for j in range(n_seg):
        a, b = j, (j + 1) % n_seg
        c, d = n_seg + j, n_seg + (j + 1) % n_seg
        tris.append([a, b, d])
        tris.append([a, d, c])
    bot, top = 2 * n_seg, 2 * n_seg + 1
    for j in range(n_seg):
        a, b = j, (j + 1) % n_seg
        tris.append([bot, b, a])
        tris.append([top, n_seg + a, n_seg + b])
    return Mesh(verts, np.asarray(tris, dtype=np.int32))
