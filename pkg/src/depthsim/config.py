"""Configuration: defaults, YAML loading, deep-merge and object builders.

Every tunable default of the simulator appears explicitly in
:func:`default_config`, and every run writes the fully resolved
configuration (including derived quantities such as the reference-plane
distance and disparity search bounds) next to its outputs, so any result
can be reproduced from the artifacts alone.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .noise import NoiseConfig
from .pipeline import PostConfig
from .render import MotionSpec
from .scene import Material, Mesh, Scene, load_mesh, make_box, make_cylinder, make_plane, make_sphere
from .sensor import Intrinsics, Pattern, SensorModel, generate_dot_pattern, pad_pattern_square
from .geometry import RigidTransform
from .compositor import add_primitive_clutter


class ConfigError(ValueError):
    """Configuration file or value problem; message names the key."""


def default_config() -> dict:
    return {
        "seed": 0,
        "jobs": 1,
        "sensor": {
            "camera": {"fx": 580.0, "fy": 580.0, "cx": 319.5, "cy": 239.5,
                       "width": 640, "height": 480,
                       "k1": 0.0, "k2": 0.0, "k3": 0.0, "p1": 0.0, "p2": 0.0},
            "projector": {"fx": 840.0, "fy": 840.0, "cx": 639.5, "cy": 639.5,
                          "width": 1280, "height": 1280},
            "baseline_m": 0.075,
            "orientation": "horizontal",
            "depth_range_m": [0.4, 8.0],
            "window_size_px": 9,
            "subpixel_denominator": 8,
            "ir_bit_depth": 10,
            "projector_power": 2.0,
            "emitter_psf_px": 0.8,
        },
        "pattern": {
            "source": "generate",          # generate | file
            "side_px": 1280,
            "dot_density": 0.2,
            "dot_size_px": 2,
            "seed": 20177,
            "file": None,
        },
        "matcher": {
            "texture_min_levels": 2,
            "uniqueness_ratio": 0.8,
            "prefilter_gain": 64.0,
            "prefilter_floor": 2.0,
            "subpixel_interpolation": "parabolic",
            "tie_break": "smallest_disparity",
        },
        "noise": {
            "gaussian_sigma": 0.002,
            "grain_sigma": 0.35,
            "grain_scale_px": 0.7,
            "scratch_count": 0,
        },
        "motion": {
            "mode": "static",              # static | linear_velocity | vibration | rolling_shutter
            "velocity": [0.0, 0.0, 0.0],   # m/s, world frame
            "amplitude": 0.0,              # m, vibration
            "exposures": 1,
            "frame_time": 1.0 / 30.0,
        },
        "scene": {
            "ambient_light": 0.0,
            "target": {
                "shape": "box",            # box | sphere | cylinder | mesh
                "size": [0.3, 0.3, 0.3],
                "mesh": None,              # path, for shape == mesh
                "format": None,            # obj | ply | stl (default: extension)
                "scale": 1.0,              # unit conversion at load
                "position": [0.0, 0.0, 0.0],
                "albedo": 0.8,
                "reflectance_ratio": 0.0,
                "roughness": 0.5,
            },
            "floor": {"enabled": True, "offset_m": -0.3, "size_m": 20.0,
                      "albedo": 0.6},
            "clutter": {"count": 0, "seed": 1,
                        "bounds": [[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]]},
        },
        "background": {"real_scan": None},  # 16-bit mm depth PNG, 0 = invalid
        "viewpoints": {
            "mode": "icosphere",           # icosphere | random
            "subdivision": 0,
            "count": 12,                   # random mode only
            "radius_range": [1.2, 1.8],
            "seed": 3,
            "cap_deg": 90.0,               # random mode: cap about `up`
            "up": [0.0, 0.0, 1.0],
        },
        "post": {"trim": True, "smooth_kernel": 3, "fill_max_gap": 6},
        "output": {"save_ir": False, "save_disparity": False},
        "benchmark": {
            "distances": [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            "tilts": [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0],
            "seeds": 5,
            "wall_albedo": 0.8,
            "wall_size_m": 2.6,
            "overlays": [],               # [{name, coeffs_mm_per_m: [c0, c1, ...]}]
        },
    }


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{here}'")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, optionally overridden by a YAML file and an override dict."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(str(path))
        with open(path) as fh:
            try:
                user = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _deep_merge(cfg, user)
        cfg["_base_dir"] = str(path.parent.resolve())
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    cfg.setdefault("_base_dir", str(Path.cwd()))
    return cfg


def config_hash(cfg: dict) -> str:
    """Stable digest of everything that affects outputs (jobs excluded)."""
    clean = {k: v for k, v in cfg.items()
             if k not in ("jobs", "_base_dir")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_resolved_config(cfg: dict, sensor: SensorModel, path) -> None:
    out = {k: v for k, v in cfg.items() if not k.startswith("_")}
    d_min, d_max = sensor.disparity_bounds_px
    out["derived"] = {
        "reference_plane_m": float(sensor.reference_plane_m),
        "reference_offset_px": float(sensor.reference_offset_px),
        "disparity_bounds_px": [float(d_min), float(d_max)],
        "config_hash": config_hash(cfg),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(out, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# builders


def build_sensor(cfg: dict) -> SensorModel:
    s = cfg["sensor"]
    try:
        camera = Intrinsics(**s["camera"])
        projector = Intrinsics(**s["projector"])
        pattern = build_pattern(cfg)
        return SensorModel(
            camera=camera,
            projector=projector,
            baseline_m=float(s["baseline_m"]),
            pattern=pattern,
            orientation=s["orientation"],
            depth_range_m=tuple(float(z) for z in s["depth_range_m"]),
            window_size_px=int(s["window_size_px"]),
            subpixel_denominator=int(s["subpixel_denominator"]),
            ir_bit_depth=int(s["ir_bit_depth"]),
            projector_power=float(s["projector_power"]),
            emitter_psf_px=float(s["emitter_psf_px"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sensor: {exc}") from exc


def build_pattern(cfg: dict) -> Pattern:
    p = cfg["pattern"]
    if p["source"] == "generate":
        return generate_dot_pattern(int(p["side_px"]), float(p["dot_density"]),
                                    int(p["seed"]),
                                    window_size=int(cfg["sensor"]["window_size_px"]),
                                    dot_size_px=int(p["dot_size_px"]))
    if p["source"] == "file":
        if not p["file"]:
            raise ConfigError("pattern.file required when pattern.source == file")
        from .io_utils import read_gray_png
        img = read_gray_png(_resolve_path(cfg, p["file"]))
        return pad_pattern_square(img)
    raise ConfigError(f"pattern.source '{p['source']}' not one of generate|file")


def build_noise(cfg: dict, seed: int = 0) -> NoiseConfig:
    n = cfg["noise"]
    return NoiseConfig(gaussian_sigma=float(n["gaussian_sigma"]),
                       grain_sigma=float(n["grain_sigma"]),
                       grain_scale_px=float(n["grain_scale_px"]),
                       scratch_count=int(n["scratch_count"]), seed=seed)


def build_motion(cfg: dict) -> MotionSpec:
    m = cfg["motion"]
    return MotionSpec(mode=m["mode"], velocity=np.asarray(m["velocity"], dtype=float),
                      amplitude=float(m["amplitude"]), exposures=int(m["exposures"]),
                      frame_time=float(m["frame_time"]))


def build_post(cfg: dict) -> PostConfig:
    p = cfg["post"]
    return PostConfig(trim_range=bool(p["trim"]), smooth_kernel=int(p["smooth_kernel"]),
                      fill_max_gap=int(p["fill_max_gap"]))


def matcher_kwargs(cfg: dict) -> dict:
    m = cfg["matcher"]
    if m["subpixel_interpolation"] != "parabolic":
        raise ConfigError("matcher.subpixel_interpolation: only 'parabolic' is implemented")
    if m["tie_break"] != "smallest_disparity":
        raise ConfigError("matcher.tie_break: only 'smallest_disparity' is implemented")
    return {
        "texture_min_levels": int(m["texture_min_levels"]),
        "uniqueness_ratio": float(m["uniqueness_ratio"]),
        "prefilter_gain": float(m["prefilter_gain"]),
        "prefilter_floor": float(m["prefilter_floor"]),
    }


def _resolve_path(cfg: dict, p) -> Path:
    path = Path(p)
    if not path.is_absolute():
        path = Path(cfg.get("_base_dir", ".")) / path
    if not path.exists():
        raise FileNotFoundError(str(path))
    return path


def build_target_mesh(cfg: dict) -> Mesh:
    t = cfg["scene"]["target"]
    shape = t["shape"]
    size = [float(x) for x in t["size"]]
    if shape == "box":
        return make_box(*size)
    if shape == "sphere":
        return make_sphere(size[0] / 2.0)
    if shape == "cylinder":
        return make_cylinder(size[0] / 2.0, size[1])
    if shape == "mesh":
        if not t["mesh"]:
            raise ConfigError("scene.target.mesh path required for shape == mesh")
        return load_mesh(_resolve_path(cfg, t["mesh"]), fmt=t["format"],
                         scale=float(t["scale"]))
    raise ConfigError(f"scene.target.shape '{shape}' not one of box|sphere|cylinder|mesh")


def build_scene(cfg: dict) -> Scene:
    sc = cfg["scene"]
    t = sc["target"]
    scene = Scene(ambient_light=float(sc["ambient_light"]))
    material = Material(albedo=float(t["albedo"]),
                        reflectance_ratio=float(t["reflectance_ratio"]),
                        roughness=float(t["roughness"]))
    pose = RigidTransform(np.eye(3), np.asarray(t["position"], dtype=float))
    scene.add(build_target_mesh(cfg), pose, material)

    floor = sc["floor"]
    if floor["enabled"]:
        fpose = RigidTransform(np.eye(3), np.array([0.0, 0.0, float(floor["offset_m"])]))
        scene.add(make_plane(float(floor["size_m"]), float(floor["size_m"])),
                  fpose, Material(albedo=float(floor["albedo"])))

    clutter = sc["clutter"]
    if int(clutter["count"]) > 0:
        add_primitive_clutter(scene, int(clutter["count"]),
                              (clutter["bounds"][0], clutter["bounds"][1]),
                              int(clutter["seed"]), target_index=0)
    return scene
