"""Monocular region-based 6DOF rigid-object pose tracking.

The tracker aligns rendered model silhouettes with pixel-wise posterior
segmentations built from vertex-anchored local color histograms, refining
poses with a reweighted Gauss-Newton scheme over a narrow band of the
silhouette's signed distance field.
"""

from .errors import (BorderPixel, DegenerateDepth, DegenerateMesh, DimensionMismatch,
                     EmptyAccumulation, EmptyMesh, EmptyRegion, InvalidFrustum,
                     NoVisibleCenters, NotCovered, NotVisible, PointBehindCamera,
                     RegionTrackError, SequenceFormat, SingularSystem, TrackingDiverged,
                     Uninitialized)
from .geometry import (CameraIntrinsics, MeshPair, RigidTransform, TriangleMesh, Twist,
                       backproject, compose, decimate_mesh, exp_twist, invert, load_obj,
                       project, scale_intrinsics)
from .optimizer import OptimizationSettings, optimize
from .tracker import TrackerState, initialize, make_tracker, reset_pose, step

__version__ = "0.1.0"

__all__ = [
    "BorderPixel", "CameraIntrinsics", "DegenerateDepth", "DegenerateMesh",
    "DimensionMismatch", "EmptyAccumulation", "EmptyMesh", "EmptyRegion",
    "InvalidFrustum", "MeshPair", "NoVisibleCenters", "NotCovered", "NotVisible",
    "OptimizationSettings", "PointBehindCamera", "RegionTrackError", "RigidTransform",
    "SequenceFormat", "SingularSystem", "TrackerState", "TrackingDiverged",
    "TriangleMesh", "Twist", "Uninitialized", "backproject", "compose",
    "decimate_mesh", "exp_twist", "initialize", "invert", "load_obj", "make_tracker",
    "optimize", "project", "reset_pose", "scale_intrinsics", "step",
]
