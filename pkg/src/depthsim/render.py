"""IR capture rendering: the emitter pattern ray-traced onto the scene.

One primary ray per pixel plus one shadow ray per light (no bounces).
At each hit the pattern is sampled by projecting the point into the
emitter frame, then scaled by a two-lobe reflectance (Lambert diffuse +
Schlick-weighted specular), cosine of incidence and inverse-square
falloff. Points whose path to the emitter is blocked receive no pattern
light, which is what later produces shadow holes in the reconstruction.

Motion is simulated by re-rendering along the trajectory: exposure
averaging for blur/vibration, per-row displaced origins for rolling
shutter. Rendering is deterministic: no stochastic sampling anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvh import AcceleratedScene
from .geometry import RigidTransform
from .imageops import sample_bilinear
from .scene import DirectionalLight, PointLight
from .sensor import SensorModel

STATIC = "static"
LINEAR_VELOCITY = "linear_velocity"
VIBRATION = "vibration"
ROLLING_SHUTTER = "rolling_shutter"

_SHADOW_EPS = 1e-5


@dataclass
class MotionSpec:
    """Camera motion during one exposure window."""

    mode: str = STATIC
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m/s, world frame
    amplitude: float = 0.0  # meters, vibration only
    exposures: int = 1
    frame_time: float = 1.0 / 30.0

    def __post_init__(self):
        if self.mode not in (STATIC, LINEAR_VELOCITY, VIBRATION, ROLLING_SHUTTER):
            raise ValueError(f"unknown motion mode '{self.mode}'")
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        if self.exposures < 1:
            raise ValueError("exposures must be >= 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.frame_time <= 0:
            raise ValueError("frame_time must be positive")

    def is_trivial(self) -> bool:
        moving = float(np.linalg.norm(self.velocity)) > 0.0
        if self.mode == STATIC:
            return True
        if self.mode == VIBRATION:
            return self.amplitude == 0.0
        return not moving


@dataclass
class IrCapture:
    """Single-channel intensity image in [0, 1] plus exposure metadata."""

    image: np.ndarray
    poses: list[RigidTransform]
    timestamps: list[float]

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 2:
            raise ValueError("capture must be 2D")


def _pixel_dirs(sensor: SensorModel) -> np.ndarray:
    cam = sensor.camera
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    d = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy,
                  np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d


def _vignetting(sensor: SensorModel) -> np.ndarray:
    """Natural cos^4 falloff of the camera lens, flattened per pixel."""
    cam = sensor.camera
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    tan2 = ((uu - cam.cx) / cam.fx) ** 2 + ((vv - cam.cy) / cam.fy) ** 2
    return (1.0 / (1.0 + tan2) ** 2).reshape(-1)


def _schlick(f0, cos_t):
    return f0 + (1.0 - f0) * (1.0 - cos_t) ** 5


def _light_contribution(accel, pts, n_shade, n_geom, view, albedo, refl, rough,
                        light_dir, light_dist, irradiance):
    """Reflected intensity for one light; handles occlusion via shadow rays."""
    cos_i = np.einsum("ij,ij->i", n_shade, light_dir)
    lit = cos_i > 0.0
    # light arriving from behind the geometric surface never contributes
    lit &= np.einsum("ij,ij->i", n_geom, light_dir) > 0.0
    lit &= irradiance > 0.0
    if not np.any(lit):
        return np.zeros(len(pts))
    idx = np.nonzero(lit)[0]
    origins = pts[idx] + n_geom[idx] * _SHADOW_EPS
    occluded = accel.occluded_batch(origins, light_dir[idx],
                                    light_dist[idx] - 2.0 * _SHADOW_EPS)
    out = np.zeros(len(pts))
    vis = idx[~occluded]
    if len(vis) == 0:
        return out
    h = light_dir[vis] + view[vis]
    h /= np.maximum(np.linalg.norm(h, axis=1), 1e-12)[:, None]
    cos_nh = np.clip(np.einsum("ij,ij->i", n_shade[vis], h), 0.0, 1.0)
    cos_lh = np.clip(np.einsum("ij,ij->i", light_dir[vis], h), 0.0, 1.0)
    shiny = np.maximum(2.0 / rough[vis] ** 2 - 2.0, 1.0)
    spec = _schlick(refl[vis], cos_lh) * cos_nh ** shiny
    diffuse = (1.0 - refl[vis]) * albedo[vis]
    out[vis] = irradiance[vis] * cos_i[vis] * (diffuse + spec)
    return out


def render_capture(accel: AcceleratedScene, sensor: SensorModel,
                   camera_pose: RigidTransform,
                   motion: MotionSpec | None = None,
                   projector_offset_override: np.ndarray | None = None) -> IrCapture:
    """Render the IR capture for one frame.

    With a non-trivial `motion` the work is delegated to
    :func:`render_with_motion`; otherwise a single static exposure is traced.
    `projector_offset_override` replaces the camera-frame emitter offset
    (testing hook for mirrored-baseline configurations).
    """
    if motion is not None and not motion.is_trivial():
        return render_with_motion(accel, sensor, camera_pose, motion,
                                  projector_offset_override)
    img = _render_exposure(accel, sensor, camera_pose, None, projector_offset_override)
    return IrCapture(img, poses=[camera_pose], timestamps=[0.0])


def render_with_motion(accel: AcceleratedScene, sensor: SensorModel,
                       camera_pose: RigidTransform, motion: MotionSpec,
                       projector_offset_override: np.ndarray | None = None) -> IrCapture:
    """Render under camera motion (blur, vibration or rolling shutter)."""
    if motion.mode == STATIC or motion.is_trivial():
        img = _render_exposure(accel, sensor, camera_pose, None, projector_offset_override)
        return IrCapture(img, poses=[camera_pose], timestamps=[0.0])

    if motion.mode == ROLLING_SHUTTER:
        rows = sensor.camera.height
        row_t = motion.frame_time * np.arange(rows) / rows
        row_offsets = row_t[:, None] * motion.velocity[None, :]
        per_pixel = np.repeat(row_offsets, sensor.camera.width, axis=0)
        origins = camera_pose.translation[None, :] + per_pixel
        img = _render_exposure(accel, sensor, camera_pose, origins,
                               projector_offset_override)
        return IrCapture(img, poses=[camera_pose], timestamps=list(row_t))

    n = motion.exposures
    if motion.mode == LINEAR_VELOCITY:
        ts = motion.frame_time * np.arange(n) / max(n - 1, 1)
        offsets = ts[:, None] * motion.velocity[None, :]
    else:  # vibration
        ts = motion.frame_time * np.arange(n) / max(n - 1, 1)
        speed = float(np.linalg.norm(motion.velocity))
        axis = motion.velocity / speed if speed > 0 else camera_pose.rotation[:, 0]
        offsets = motion.amplitude * np.sin(2.0 * np.pi * np.arange(n) / n)[:, None] * axis[None, :]

    frames = []
    poses = []
    for k in range(n):
        pose_k = camera_pose.translated(offsets[k])
        frames.append(_render_exposure(accel, sensor, pose_k, None,
                                       projector_offset_override))
        poses.append(pose_k)
    img = np.mean(np.stack(frames, axis=0), axis=0)
    return IrCapture(img, poses=poses, timestamps=list(ts))


def _render_exposure(accel: AcceleratedScene, sensor: SensorModel,
                     pose: RigidTransform, origins_override: np.ndarray | None,
                     projector_offset_override: np.ndarray | None) -> np.ndarray:
    cam = sensor.camera
    scene = accel.scene
    h, w = cam.height, cam.width
    n_px = h * w

    dirs = _pixel_dirs(sensor) @ pose.rotation.T
    if origins_override is None:
        origins = np.broadcast_to(pose.translation, (n_px, 3)).copy()
    else:
        origins = np.ascontiguousarray(origins_override, dtype=np.float64)

    proj_local = (projector_offset_override if projector_offset_override is not None
                  else sensor.projector_offset_local())
    proj_local = np.asarray(proj_local, dtype=np.float64).reshape(3)

    t, tri, bu, bv = accel.intersect_batch(origins, dirs)
    hit = tri >= 0
    out = np.full(n_px, float(scene.ambient_light))
    if not np.any(hit):
        out *= _vignetting(sensor)
        np.clip(out, 0.0, 1.0, out=out)
        return out.reshape(h, w)

    hidx = np.nonzero(hit)[0]
    tri_h = tri[hidx]
    pts = origins[hidx] + t[hidx, None] * dirs[hidx]
    view = -dirs[hidx]

    # shading normal: interpolate corners, flip toward the viewer
    sn = accel.tri_shading_normals[tri_h]
    w0 = (1.0 - bu[hidx] - bv[hidx])[:, None]
    n_shade = w0 * sn[:, 0] + bu[hidx][:, None] * sn[:, 1] + bv[hidx][:, None] * sn[:, 2]
    n_shade /= np.maximum(np.linalg.norm(n_shade, axis=1), 1e-12)[:, None]
    n_geom = accel.tri_geom_normal[tri_h].copy()
    facing = np.einsum("ij,ij->i", n_geom, view) < 0.0
    n_geom[facing] = -n_geom[facing]
    flip_s = np.einsum("ij,ij->i", n_shade, view) < 0.0
    n_shade[flip_s] = -n_shade[flip_s]

    uv = None
    if accel.normal_maps or accel.albedo_maps:
        tuv = accel.tri_uv[tri_h]
        uv = w0 * tuv[:, 0] + bu[hidx][:, None] * tuv[:, 1] + bv[hidx][:, None] * tuv[:, 2]
    if accel.normal_maps:
        n_shade = _apply_normal_maps(accel, tri_h, uv, n_shade)

    mat = accel.tri_material[tri_h]
    albedo = accel.mat_albedo[mat].copy()
    refl = accel.mat_reflectance[mat]
    rough = accel.mat_roughness[mat]
    if accel.albedo_maps:
        for tex_id, tex in enumerate(accel.albedo_maps):
            sel = accel.tri_albedo_map[tri_h] == tex_id
            if np.any(sel):
                th, tw = tex.shape[:2]
                albedo[sel] *= sample_bilinear(tex, uv[sel, 0] * (tw - 1),
                                               (1.0 - uv[sel, 1]) * (th - 1))

    # pattern light from the emitter
    proj_center = pose.apply(proj_local)
    l_vec = proj_center[None, :] - pts
    dist = np.linalg.norm(l_vec, axis=1)
    l_dir = l_vec / np.maximum(dist, 1e-12)[:, None]

    # project the hit points into the emitter image plane
    local = (pts - proj_center) @ pose.rotation  # world -> camera-frame axes
    z_p = local[:, 2]
    in_front = z_p > 1e-9
    pj = sensor.projector
    with np.errstate(divide="ignore", invalid="ignore"):
        ppx = pj.fx * local[:, 0] / z_p + pj.cx
        ppy = pj.fy * local[:, 1] / z_p + pj.cy
    patt = np.where(in_front,
                    sample_bilinear(sensor.pattern.image,
                                    np.where(in_front, ppx, 0.0),
                                    np.where(in_front, ppy, 0.0)),
                    0.0)
    # emitter lens falloff toward the edge of the projected field (cos^4)
    with np.errstate(divide="ignore", invalid="ignore"):
        tan2_p = np.where(in_front, (local[:, 0] / z_p) ** 2
                          + (local[:, 1] / z_p) ** 2, 0.0)
    patt = patt / (1.0 + tan2_p) ** 2

    irradiance = sensor.projector_power * patt / np.maximum(dist, 1e-12) ** 2
    radiance = _light_contribution(accel, pts, n_shade, n_geom, view,
                                   albedo, refl, rough, l_dir, dist, irradiance)

    for light in scene.extra_lights:
        if isinstance(light, PointLight):
            lv = light.position[None, :] - pts
            ld = np.linalg.norm(lv, axis=1)
            ldir = lv / np.maximum(ld, 1e-12)[:, None]
            irr = np.full(len(pts), light.power) / np.maximum(ld, 1e-12) ** 2
            radiance += _light_contribution(accel, pts, n_shade, n_geom, view,
                                            albedo, refl, rough, ldir, ld, irr)
        elif isinstance(light, DirectionalLight):
            ldir = np.broadcast_to(-light.direction, (len(pts), 3))
            ld = np.full(len(pts), 1e9)
            irr = np.full(len(pts), light.irradiance)
            radiance += _light_contribution(accel, pts, n_shade, n_geom, view,
                                            albedo, refl, rough, ldir, ld, irr)
        else:
            raise TypeError(f"unsupported light type {type(light)!r}")

    out[hidx] = radiance + scene.ambient_light * albedo
    out *= _vignetting(sensor)
    np.clip(out, 0.0, 1.0, out=out)
    return out.reshape(h, w)


def _apply_normal_maps(accel, tri_h, uv, n_shade):
    """Perturb shading normals in tangent space for textured triangles."""
    result = n_shade
    nm_id = accel.tri_normal_map[tri_h]
    for tex_id, tex in enumerate(accel.normal_maps):
        sel = np.nonzero(nm_id == tex_id)[0]
        if len(sel) == 0:
            continue
        tris = tri_h[sel]
        e1 = accel.tri_e1[tris]
        e2 = accel.tri_e2[tris]
        tuv = accel.tri_uv[tris]
        du1 = tuv[:, 1, 0] - tuv[:, 0, 0]
        dv1 = tuv[:, 1, 1] - tuv[:, 0, 1]
        du2 = tuv[:, 2, 0] - tuv[:, 0, 0]
        dv2 = tuv[:, 2, 1] - tuv[:, 0, 1]
        det = du1 * dv2 - du2 * dv1
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tangent = (e1 * dv2[:, None] - e2 * dv1[:, None]) * inv[:, None]
        tl = np.linalg.norm(tangent, axis=1)
        tangent = np.where((tl > 1e-12)[:, None], tangent / np.maximum(tl, 1e-12)[:, None],
                           np.array([1.0, 0.0, 0.0]))
        n = result[sel]
        # orthonormalize against the shading normal
        tangent = tangent - np.einsum("ij,ij->i", tangent, n)[:, None] * n
        tl = np.maximum(np.linalg.norm(tangent, axis=1), 1e-12)
        tangent /= tl[:, None]
        bitangent = np.cross(n, tangent)
        th, tw = tex.shape[:2]
        tx = uv[sel, 0] * (tw - 1)
        ty = (1.0 - uv[sel, 1]) * (th - 1)
        if tex.ndim == 3:
            nx = sample_bilinear(tex[:, :, 0], tx, ty) * 2.0 - 1.0
            ny = sample_bilinear(tex[:, :, 1], tx, ty) * 2.0 - 1.0
            nz = sample_bilinear(tex[:, :, 2], tx, ty) * 2.0 - 1.0
        else:
            nx = sample_bilinear(tex, tx, ty) * 2.0 - 1.0
            ny = np.zeros_like(nx)
            nz = np.ones_like(nx)
        perturbed = (tangent * nx[:, None] + bitangent * ny[:, None] + n * nz[:, None])
        pl = np.maximum(np.linalg.norm(perturbed, axis=1), 1e-12)
        result[sel] = perturbed / pl[:, None]
    return result
