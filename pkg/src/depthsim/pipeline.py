"""One-frame reconstruction pipeline: render -> degrade -> match -> depth.

Shared by the dataset generator, the benchmark harness and the stage
inspector, so every consumer reproduces the exact same device chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bvh import AcceleratedScene
from .depth_post import fill_holes, smooth, trim
from .geometry import RigidTransform
from .matcher import DepthMap, DisparityMap, compute_disparity, disparity_to_depth
from .noise import NoiseConfig, apply_lens_distortion, apply_sensor_noise
from .render import IrCapture, MotionSpec, render_capture
from .sensor import SensorModel


@dataclass
class PostConfig:
    """Depth post-processing stage toggles (device-style)."""

    trim_range: bool = True
    smooth_kernel: int = 3    # 1 disables smoothing
    fill_max_gap: int = 6     # 0 disables hole filling


@dataclass
class FrameStages:
    """All intermediate products of a single reconstruction."""

    capture: IrCapture
    noisy: np.ndarray
    disparity: DisparityMap
    depth_raw: DepthMap
    depth: DepthMap


def reconstruct_frame(accel: AcceleratedScene, sensor: SensorModel,
                      pose: RigidTransform, *,
                      motion: MotionSpec | None = None,
                      noise: NoiseConfig | None = None,
                      seed: int | None = None,
                      post: PostConfig | None = None,
                      matcher_kwargs: dict | None = None) -> FrameStages:
    """Run the full single-frame pipeline and keep every stage.

    `seed` overrides the noise config seed (per-frame seeding); when
    `noise` is None only ADC quantization is applied. `post` of None
    skips post-processing entirely (depth == trimmed raw conversion is
    NOT applied; depth mirrors depth_raw).
    """
    capture = render_capture(accel, sensor, pose, motion)

    degraded = capture.image
    if sensor.camera.has_distortion():
        degraded = apply_lens_distortion(degraded, sensor.camera)
    cfg = noise if noise is not None else NoiseConfig(gaussian_sigma=0.0,
                                                      grain_sigma=0.0,
                                                      scratch_count=0, seed=0)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    noisy = apply_sensor_noise(degraded, cfg, sensor.ir_bit_depth)

    disparity = compute_disparity(noisy, sensor.reference_image(), sensor,
                                  **(matcher_kwargs or {}))
    depth_raw = disparity_to_depth(disparity, sensor)

    depth = depth_raw
    if post is not None:
        depth = apply_post(depth_raw, sensor, post)
    return FrameStages(capture=capture, noisy=noisy, disparity=disparity,
                       depth_raw=depth_raw, depth=depth)


def apply_post(depth: DepthMap, sensor: SensorModel, post: PostConfig) -> DepthMap:
    out = depth
    if post.trim_range:
        out = trim(out, sensor)
    if post.smooth_kernel > 1:
        out = smooth(out, post.smooth_kernel)
    if post.fill_max_gap > 0:
        out = fill_holes(out, post.fill_max_gap)
    return out
