"""Encoded Human Pose Images.

An EHPI stacks the last 32 frames of one tracked person into a
32 (frames) x 15 (joints) x 3 grid: x in channel 0, y in channel 1 and
channel 2 unused. Row ``j`` of every column is always joint ``JointId(j)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoPresentJoints, TooFewFrames
from .pose_core import MIRROR_INDEX, NUM_JOINTS, JointId, Skeleton

EHPI_FRAMES = 32
EHPI_CHANNELS = 3

FEET = (JointId.LEFT_ANKLE, JointId.RIGHT_ANKLE)
KNEES = (JointId.LEFT_KNEE, JointId.RIGHT_KNEE)


@dataclass
class Ehpi:
    values: np.ndarray  # (32, 15, 3)
    present: np.ndarray  # (32, 15) bool

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.present = np.asarray(self.present, dtype=bool)
        if self.values.shape != (EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS):
            raise ValueError(f"EHPI values need shape (32, 15, 3), got {self.values.shape}")
        if self.present.shape != (EHPI_FRAMES, NUM_JOINTS):
            raise ValueError(f"EHPI mask needs shape (32, 15), got {self.present.shape}")

    def to_network_input(self, dtype=np.float32) -> np.ndarray:
        """Channels-first (3, 32, 15) array as consumed by the classifier."""
        return np.ascontiguousarray(self.values.transpose(2, 0, 1), dtype=dtype)

    def copy(self) -> "Ehpi":
        return Ehpi(self.values.copy(), self.present.copy())


@dataclass(frozen=True)
class AugmentConfig:
    p_flip: float = 0.5
    p_swap_given_flip: float = 0.5
    p_remove_feet: float = 0.25
    p_remove_knees_given_feet: float = 0.25

    def __post_init__(self):
        for name in ("p_flip", "p_swap_given_flip", "p_remove_feet", "p_remove_knees_given_feet"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


NO_AUGMENT = AugmentConfig(0.0, 0.0, 0.0, 0.0)


def mask_invalid_joints(s: Skeleton, image_w: float, image_h: float, T_J: float = 0.4) -> Skeleton:
    """Zero out joints that lie outside the image or are below T_J."""
    j = s.joints
    bad = (
        (j[:, 2] < T_J)
        | (j[:, 0] < 0)
        | (j[:, 0] > image_w)
        | (j[:, 1] < 0)
        | (j[:, 1] > image_h)
    )
    if not bad.any():
        return s
    out = j.copy()
    out[bad] = 0.0
    return Skeleton(out)


def encode_frame(s: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """One EHPI column: (15, 3) raw (x, y, 0) rows and a presence flag per joint.

    Expects a skeleton that already went through :func:`mask_invalid_joints`,
    so presence is simply a positive score.
    """
    present = s.scores > 0
    col = np.zeros((NUM_JOINTS, EHPI_CHANNELS))
    col[present, :2] = s.xy[present]
    return col, present


class EhpiBuffer:
    """Sliding window over the most recent encoded columns of one track."""

    def __init__(self, capacity: int = EHPI_FRAMES):
        self.capacity = capacity
        self._cols: deque = deque(maxlen=capacity)
        self.frames_seen = 0

    def __len__(self):
        return len(self._cols)

    def push(self, column: np.ndarray, present: np.ndarray) -> None:
        self._cols.append((np.asarray(column, dtype=np.float64), np.asarray(present, dtype=bool)))
        self.frames_seen += 1

    def push_empty(self) -> None:
        self.push(np.zeros((NUM_JOINTS, EHPI_CHANNELS)), np.zeros(NUM_JOINTS, dtype=bool))

    @property
    def non_empty(self) -> int:
        return sum(1 for _, p in self._cols if p.any())

    @property
    def is_valid(self) -> bool:
        return self.non_empty >= 2

    def columns(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(self._cols)


def push_frame(buf: EhpiBuffer, column) -> None:
    """Append an encoded column (as returned by :func:`encode_frame`)."""
    col, present = column
    buf.push(col, present)


def materialize(buf: EhpiBuffer) -> Ehpi:
    """Right-aligned, unnormalized EHPI; missing leading columns stay zero."""
    if not buf.is_valid:
        raise TooFewFrames(f"EHPI needs two frames with a pose, buffer has {buf.non_empty}")
    values = np.zeros((EHPI_FRAMES, NUM_JOINTS, EHPI_CHANNELS))
    present = np.zeros((EHPI_FRAMES, NUM_JOINTS), dtype=bool)
    cols = buf.columns()
    start = EHPI_FRAMES - len(cols)
    for k, (col, p) in enumerate(cols):
        values[start + k] = col
        present[start + k] = p
    return Ehpi(values, present)


def normalize(e: Ehpi) -> Ehpi:
    """Min-max scale x and y independently over the present cells.

    Absent cells stay 0, and an axis without spread maps to 0.
    """
    mask = e.present
    if not mask.any():
        raise NoPresentJoints("cannot normalize an EHPI without present joints")
    out = np.zeros_like(e.values, dtype=np.float64)
    for ch in (0, 1):
        v = e.values[..., ch][mask]
        lo, hi = v.min(), v.max()
        if hi > lo:
            out[..., ch][mask] = (v - lo) / (hi - lo)
    return Ehpi(out, mask.copy())


def normalize_batch(values: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize` over a stack of EHPIs (N, 32, 15, 3)."""
    out = np.zeros(values.shape, dtype=np.float64)
    if len(values) == 0:
        return out
    big = np.finfo(np.float64).max
    for ch in (0, 1):
        v = values[..., ch]
        lo = np.where(present, v, big).min(axis=(1, 2))
        hi = np.where(present, v, -big).max(axis=(1, 2))
        span = hi - lo
        ok = span > 0
        scaled = (v - lo[:, None, None]) / np.where(ok, span, 1.0)[:, None, None]
        out[..., ch] = np.where(present & ok[:, None, None], scaled, 0.0)
    return out


def apply_augmentation(e: Ehpi, flip: bool, swap: bool, feet: bool, knees: bool) -> Ehpi:
    """Apply already-drawn augmentation decisions to a normalized EHPI."""
    values = e.values.copy()
    present = e.present.copy()
    if flip:
        values[..., 0] = np.where(present, 1.0 - values[..., 0], 0.0)
        if swap:
            values = values[:, MIRROR_INDEX]
            present = present[:, MIRROR_INDEX]
    if feet:
        rows = list(FEET) + (list(KNEES) if knees else [])
        values[:, rows] = 0.0
        present[:, rows] = False
    return Ehpi(values, present)


def draw_augmentation(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Draw (flip, swap, feet, knees); swap only happens on flipped samples and
    knees are only removed together with the feet."""
    u = rng.random(4)
    flip = bool(u[0] < cfg.p_flip)
    swap = flip and bool(u[1] < cfg.p_swap_given_flip)
    feet = bool(u[2] < cfg.p_remove_feet)
    knees = feet and bool(u[3] < cfg.p_remove_knees_given_feet)
    return flip, swap, feet, knees


def augment(e: Ehpi, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Ehpi:
    return apply_augmentation(e, *draw_augmentation(rng, cfg))


def augment_batch(values: np.ndarray, present: np.ndarray, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Augment a stack of normalized EHPIs.

    Consumes the generator exactly like calling :func:`augment` once per
    sample in order, so both paths produce identical results.
    """
    n = len(values)
    u = rng.random((n, 4))
    flip = u[:, 0] < cfg.p_flip
    swap = flip & (u[:, 1] < cfg.p_swap_given_flip)
    feet = u[:, 2] < cfg.p_remove_feet
    knees = feet & (u[:, 3] < cfg.p_remove_knees_given_feet)

    values = values.copy()
    present = present.copy()
    values[flip, ..., 0] = np.where(present[flip], 1.0 - values[flip, ..., 0], 0.0)
    values[swap] = values[swap][:, :, MIRROR_INDEX]
    present[swap] = present[swap][:, :, MIRROR_INDEX]
    for rows, sel in ((FEET, feet), (KNEES, knees)):
        for r in rows:
            values[sel, :, r] = 0.0
            present[sel, :, r] = False
    return values, present


def to_rgb8(e: Ehpi) -> np.ndarray:
    """(15, 32, 3) uint8 image: one row per joint, one column per frame."""
    v = np.clip(e.values, 0.0, 1.0)
    q = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 0, 2))


def dump_png(e: Ehpi, path) -> None:
    from PIL import Image

    Image.fromarray(to_rgb8(e)).save(Path(path))
