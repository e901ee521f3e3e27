"""depthsim: end-to-end structured-light depth sensor simulation.

Pipeline: pattern projection ray-traced over triangle meshes -> imaging
noise -> SAD block-matching stereo reconstruction -> device-style depth
post-processing, plus dataset generation and a flat-wall error benchmark.
"""

from .bvh import AcceleratedScene, Hit, build_accelerator
from .compositor import add_primitive_clutter, blend_real_background
from .depth_post import fill_holes, smooth, trim
from .geometry import RigidTransform, look_at
from .matcher import (DepthMap, DisparityMap, compute_disparity,
                      disparity_to_depth, match_block, sad_cost)
from .noise import NoiseConfig, apply_lens_distortion, apply_sensor_noise
from .pipeline import FrameStages, PostConfig, apply_post, reconstruct_frame
from .render import (IrCapture, MotionSpec, render_capture, render_with_motion)
from .scene import (DirectionalLight, Instance, Material, Mesh, MeshFormatError,
                    PointLight, Scene, load_mesh, make_box, make_cylinder,
                    make_plane, make_sphere)
from .sensor import (Intrinsics, Pattern, SensorModel, generate_dot_pattern,
                     kinect_preset, pad_pattern_square, render_reference_image)
from .viewpoints import sample_viewpoints
from .benchmark import BenchmarkReport, export_report, run_flat_wall

__version__ = "0.1.0"

__all__ = [
    "AcceleratedScene", "BenchmarkReport", "DepthMap", "DirectionalLight",
    "DisparityMap", "FrameStages", "Hit", "Instance", "IrCapture", "Intrinsics",
    "Material", "Mesh", "MeshFormatError", "MotionSpec", "NoiseConfig",
    "Pattern", "PointLight", "PostConfig", "RigidTransform", "Scene",
    "SensorModel", "add_primitive_clutter", "apply_lens_distortion",
    "apply_post", "apply_sensor_noise", "blend_real_background",
    "build_accelerator", "compute_disparity", "disparity_to_depth",
    "export_report", "fill_holes", "generate_dot_pattern", "kinect_preset",
    "load_mesh", "look_at", "make_box", "make_cylinder", "make_plane",
    "make_sphere", "match_block", "pad_pattern_square", "reconstruct_frame",
    "render_capture", "render_reference_image", "render_with_motion",
    "run_flat_wall", "sad_cost", "sample_viewpoints", "smooth", "trim",
]
