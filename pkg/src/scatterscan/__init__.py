"""Scanning simulator and planner for single-scattering media.

Renders a triangulated surface through an attenuating, backscattering
medium with a co-moving camera and spotlight, inverts the images into
per-texel albedo with honest variances, and plans light and camera poses
(greedy next-best-view or whole-path pattern search) by Gaussian
information gain. Includes medium calibration from a flat reference sheet
and a CLI for running and comparing scans.
"""

from .calibration import (CalibrationError, CalibrationResult,
                          CalibrationSetup, fit_medium)
from .estimation import (DescatteredFrame, EstimationError, OperatingPoint,
                         TextureMap, condition_irradiance, descatter,
                         face_quality, fuse, resolution_weight, texel_of,
                         texture_atlas, write_quality_csv)
from .geometry import (BVH, CameraModel, GeometryError, JointView, Pose,
                       ProjectionMap, TriMesh, direction_from_slopes,
                       inside_cone, light_visibility, load_obj, pixel_rays,
                       project, segment_resolution, slopes_from_direction)
from .infogain import (GainReport, InfoGainError, gain_from_quality,
                       gaussian_entropy, info_gain, path_gain,
                       prospective_quality, view_gain)
from .planner import (CandidateGenSpec, CandidateSet, PathPlan, PlannerError,
                      aim_at_footprint, check_feasible, execute_views,
                      fixed_baseline_views, generate_candidates, greedy_scan,
                      load_plan, next_best_view, optimize_path, save_plan)
from .radiometry import (Frame, Medium, RadiometryError, SpotLight,
                         ambient_irradiance, apply_sensor, backscatter,
                         direct_irradiance, frame_rng, henyey_greenstein,
                         model_images, render, snr)
from .scenes import (CubeSpec, HillSpec, Scene, SceneError,
                     checker_spots_albedo, load_scene, make_cube_on_plane,
                     make_hills, make_plane, scene_from_config,
                     serialize_scene)

__version__ = "0.1.0"

__all__ = [
    "BVH", "CameraModel", "GeometryError", "JointView", "Pose",
    "ProjectionMap", "TriMesh", "direction_from_slopes", "inside_cone",
    "light_visibility", "load_obj", "pixel_rays", "project",
    "segment_resolution", "slopes_from_direction",
    "Frame", "Medium", "RadiometryError", "SpotLight",
    "ambient_irradiance", "apply_sensor", "backscatter",
    "direct_irradiance", "frame_rng", "henyey_greenstein", "model_images",
    "render", "snr",
    "DescatteredFrame", "EstimationError", "OperatingPoint", "TextureMap",
    "condition_irradiance", "descatter", "face_quality", "fuse",
    "resolution_weight", "texel_of", "texture_atlas", "write_quality_csv",
    "GainReport", "InfoGainError", "gain_from_quality", "gaussian_entropy",
    "info_gain", "path_gain", "prospective_quality", "view_gain",
    "CandidateGenSpec", "CandidateSet", "PathPlan", "PlannerError",
    "aim_at_footprint", "check_feasible", "execute_views",
    "fixed_baseline_views", "generate_candidates", "greedy_scan",
    "load_plan", "next_best_view", "optimize_path", "save_plan",
    "CalibrationError", "CalibrationResult", "CalibrationSetup",
    "fit_medium",
    "CubeSpec", "HillSpec", "Scene", "SceneError", "checker_spots_albedo",
    "load_scene", "make_cube_on_plane", "make_hills", "make_plane",
    "scene_from_config", "serialize_scene",
    "__version__",
]
