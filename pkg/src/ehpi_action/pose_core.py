"""Skeleton, bounding box and track record types.

Coordinates are image pixels with +x to the right and +y pointing down.
A skeleton always carries all 15 joints; a joint that was not detected has
score 0 and its coordinates are meaningless.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import NoValidJoints

NUM_JOINTS = 15


class JointId(enum.IntEnum):
    NOSE = 0
    NECK = 1
    HIP_CENTER = 2
    LEFT_SHOULDER = 3
    LEFT_ELBOW = 4
    LEFT_WRIST = 5
    RIGHT_SHOULDER = 6
    RIGHT_ELBOW = 7
    RIGHT_WRIST = 8
    LEFT_HIP = 9
    LEFT_KNEE = 10
    LEFT_ANKLE = 11
    RIGHT_HIP = 12
    RIGHT_KNEE = 13
    RIGHT_ANKLE = 14


MIRROR_PAIRS = ((3, 6), (4, 7), (5, 8), (9, 12), (10, 13), (11, 14))

# index permutation: MIRROR_INDEX[j] is the left/right partner of joint j
MIRROR_INDEX = np.arange(NUM_JOINTS)
for _l, _r in MIRROR_PAIRS:
    MIRROR_INDEX[_l], MIRROR_INDEX[_r] = _r, _l
MIRROR_INDEX.flags.writeable = False


def mirror_joint(j: int) -> JointId:
    """Left/right partner of ``j``; nose, neck and hip center map to themselves."""
    return JointId(int(MIRROR_INDEX[int(j)]))


@dataclass(frozen=True)
class Keypoint2D:
    x: float
    y: float
    score: float


class Origin(enum.Enum):
    DETECTED = "detected"
    TRACKED = "tracked"


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"inverted bounding box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


class Skeleton:
    """Fifteen 2D joints with confidences, stored as an immutable (15, 3) array.

    Columns are x, y, score. The array is copied on construction and marked
    read-only so skeletons can be shared freely between stages.
    """

    __slots__ = ("_joints",)

    def __init__(self, joints):
        arr = np.array(joints, dtype=np.float64)
        if arr.shape != (NUM_JOINTS, 3):
            raise ValueError(f"skeleton needs shape (15, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr[:, :2])):
            raise ValueError("joint coordinates must be finite")
        if np.any((arr[:, 2] < 0) | (arr[:, 2] > 1)):
            raise ValueError("joint scores must lie in [0, 1]")
        arr.flags.writeable = False
        self._joints = arr

    @classmethod
    def from_keypoints(cls, keypoints) -> "Skeleton":
        return cls([(k.x, k.y, k.score) for k in keypoints])

    @property
    def joints(self) -> np.ndarray:
        return self._joints

    @property
    def xy(self) -> np.ndarray:
        return self._joints[:, :2]

    @property
    def scores(self) -> np.ndarray:
        return self._joints[:, 2]

    @property
    def pose_score(self) -> float:
        return float(self._joints[:, 2].mean())

    def keypoint(self, j: int) -> Keypoint2D:
        x, y, s = self._joints[int(j)]
        return Keypoint2D(float(x), float(y), float(s))

    def __len__(self):
        return NUM_JOINTS

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return np.array_equal(self._joints, other._joints)

    def __hash__(self):
        return hash(self._joints.tobytes())

    def __repr__(self):
        return f"Skeleton(pose_score={self.pose_score:.3f})"


@dataclass(frozen=True)
class TrackedHuman:
    track_id: int
    skeleton: Skeleton
    bbox: BBox
    origin: Origin = Origin.DETECTED
    # consecutive frames this track has gone without a matching detection
    age_frames: int = 0


def bbox_from_skeleton(s: Skeleton, min_score: float = 0.0) -> BBox:
    valid = s.scores >= min_score
    if not valid.any():
        raise NoValidJoints(f"no joint with score >= {min_score}")
    pts = s.xy[valid]
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return BBox(float(x0), float(y0), float(x1), float(y1))
