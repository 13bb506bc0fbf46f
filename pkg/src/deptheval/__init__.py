"""Evaluation toolkit for monocular depth estimation."""

from .depthcore import (
    BoundaryMask,
    CameraIntrinsics,
    DepthMap,
    NormalMap,
    PointMap,
    TriangleMesh,
    build_mesh,
    compute_normals,
    detect_occlusion_boundaries,
    log_depth_gradient,
    normals_from_depth,
    unproject,
)
from .metrics import MetricScore, MetricSpec, evaluate
from .relnormal import RelNormalConfig

__version__ = "0.1.0"

__all__ = [
    "BoundaryMask",
    "CameraIntrinsics",
    "DepthMap",
    "MetricScore",
    "MetricSpec",
    "NormalMap",
    "PointMap",
    "RelNormalConfig",
    "TriangleMesh",
    "build_mesh",
    "compute_normals",
    "detect_occlusion_boundaries",
    "evaluate",
    "log_depth_gradient",
    "normals_from_depth",
    "unproject",
]
