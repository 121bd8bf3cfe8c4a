"""Point cloud compression with overfitted coordinate networks."""

__version__ = "0.1.0"

from .attributes import (AttrTrainConfig, ColorTarget, build_color_targets,
                         reconstruct_attributes, train_attributes)
from .dynamic import (BezierConfig, DynamicMode, FrameGroup, bezier_sample,
                      decode_group, encode_group, encode_static)
from .estimators import ColorField, OccupancyField
from .geometry import (GeomTrainConfig, SamplingPlan, fine_tune_threshold,
                       focal_loss, make_sampling_plan,
                       occupancy_probabilities, reconstruct_geometry,
                       sample_training_voxel, train_geometry)
from .metrics import (MetricsReport, bits_per_point, d1_psnr, d2_psnr,
                      evaluate, p2point_error, yuv_psnr)
from .partition import CubeSet, build_cube_set, candidate_count
from .pointcloud import (RawCloud, VoxelizedCloud, VoxelTransform, parse_ply,
                         read_cloud, voxelize, write_ply)

__all__ = [
    "AttrTrainConfig", "BezierConfig", "ColorField", "ColorTarget", "CubeSet",
    "DynamicMode", "FrameGroup", "GeomTrainConfig", "MetricsReport",
    "OccupancyField", "RawCloud", "SamplingPlan", "VoxelTransform", "VoxelizedCloud",
    "bezier_sample", "bits_per_point", "build_color_targets",
    "build_cube_set", "candidate_count", "d1_psnr", "d2_psnr",
    "decode_group", "encode_group", "encode_static", "evaluate",
    "fine_tune_threshold", "focal_loss", "make_sampling_plan",
    "occupancy_probabilities", "p2point_error", "parse_ply", "read_cloud",
    "reconstruct_attributes", "reconstruct_geometry",
    "sample_training_voxel", "train_attributes", "train_geometry",
    "voxelize", "write_ply", "yuv_psnr",
]
