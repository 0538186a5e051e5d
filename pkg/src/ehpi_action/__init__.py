"""Pose-based human action recognition from encoded pose images.

Stages: multi-person tracking with optional optical-flow propagation,
EHPI encoding, a small numpy CNN, synthetic data and file formats.
"""
from .ehpi import Ehpi, EhpiBuffer, encode_frame, materialize, normalize
from .errors import EhpiError
from .pose_core import BBox, JointId, Keypoint2D, Skeleton, TrackedHuman, bbox_from_skeleton
from .tracking import Tracker, TrackerConfig, skeleton_similarity

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Ehpi",
    "EhpiBuffer",
    "EhpiError",
    "JointId",
    "Keypoint2D",
    "Skeleton",
    "TrackedHuman",
    "Tracker",
    "TrackerConfig",
    "bbox_from_skeleton",
    "encode_frame",
    "materialize",
    "normalize",
    "skeleton_similarity",
]
