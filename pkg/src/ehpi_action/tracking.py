"""Pose-based multi-person tracking.

Skeletons are associated across frames purely from joint positions: every
joint pair closer than a fraction of the reference skeleton's bounding box
diagonal contributes a linear similarity, and two skeletons whose mean
joint similarity exceeds a threshold are treated as the same person.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageSizeMismatch, NoValidJoints
from .optical_flow import FlowConfig, track_points
from .pose_core import BBox, Origin, Skeleton, TrackedHuman, bbox_from_skeleton


@dataclass(frozen=True)
class TrackerConfig:
    F: float = 0.025
    T_J: float = 0.4
    T_S: float = 0.15
    max_coast_frames: int = 8
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        if not self.F > 0:
            raise ValueError("F must be positive")
        if not 0 <= self.T_J <= 1:
            raise ValueError("T_J must lie in [0, 1]")
        if not 0 <= self.T_S <= 1:
            raise ValueError("T_S must lie in [0, 1]")
        if self.max_coast_frames < 0:
            raise ValueError("max_coast_frames must be >= 0")


@dataclass
class TrackerState:
    live_tracks: list[TrackedHuman] = field(default_factory=list)
    next_id: int = 1
    prev_frame_image: np.ndarray | None = None
    # skeleton of each live track one frame before its current one
    previous_skeletons: dict[int, Skeleton] = field(default_factory=dict)


def max_joint_distance(box: BBox, F: float) -> float:
    return F * math.hypot(box.width, box.height)


def joint_distance(a_i, b_i) -> float:
    ax, ay = (a_i.x, a_i.y) if hasattr(a_i, "x") else a_i[:2]
    bx, by = (b_i.x, b_i.y) if hasattr(b_i, "x") else b_i[:2]
    return math.hypot(ax - bx, ay - by)


def joint_similarity(delta: float, delta_max: float) -> float:
    # a zero-size reference box accepts nothing, not even a perfect overlap
    if delta_max <= 0 or delta >= delta_max:
        return 0.0
    return 1.0 - delta / delta_max


def skeleton_similarity(a: Skeleton, b: Skeleton, cfg: TrackerConfig) -> float:
    """Mean joint similarity over joints confidently present in both skeletons.

    The acceptance radius comes from ``a``'s bounding box, so the measure is
    not symmetric.
    """
    sa = a.scores
    valid_a = sa >= cfg.T_J
    if not valid_a.any():
        return 0.0
    both = valid_a & (b.scores >= cfg.T_J)
    if not both.any():
        return 0.0
    pts = a.xy[valid_a]
    span = pts.max(axis=0) - pts.min(axis=0)
    delta_max = cfg.F * math.hypot(span[0], span[1])
    if delta_max <= 0:
        return 0.0
    d = np.hypot(*(a.xy[both] - b.xy[both]).T)
    s = np.where(d < delta_max, 1.0 - d / delta_max, 0.0)
    return float(s.mean())


def pair_similarity(a: Skeleton, b: Skeleton, cfg: TrackerConfig) -> float:
    """Order-free similarity used for every merge decision: the larger of the
    two directed scores."""
    return max(skeleton_similarity(a, b, cfg), skeleton_similarity(b, a, cfg))


def dedupe_detections(detections: list[Skeleton], cfg: TrackerConfig) -> list[Skeleton]:
    """Drop detections that duplicate a higher-scoring one.

    Candidates are visited by descending pose score (ties keep input order);
    a candidate survives only if it is not similar to any survivor. The
    survivors are returned in that visiting order.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].pose_score)
    kept: list[Skeleton] = []
    for i in order:
        cand = detections[i]
        if all(pair_similarity(k, cand, cfg) <= cfg.T_S for k in kept):
            kept.append(cand)
    return kept


def _bbox_or_all(s: Skeleton, min_score: float) -> BBox:
    try:
        return bbox_from_skeleton(s, min_score)
    except NoValidJoints:
        return bbox_from_skeleton(s, 0.0)


def merge_with_tracks(detections, propagated_tracks, cfg: TrackerConfig, next_id: int):
    """Hand track ids to detections.

    ``propagated_tracks`` holds TrackedHuman records whose skeletons were
    already moved into the current frame. All detection/track pairs above
    T_S are ranked by similarity and consumed best-first. Returns
    ``(assigned, unmatched_tracks, next_id)`` where ``assigned`` follows the
    detection order and unmatched detections received fresh ids.
    """
    scores = [
        (pair_similarity(det, trk.skeleton, cfg), di, ti)
        for di, det in enumerate(detections)
        for ti, trk in enumerate(propagated_tracks)
    ]
    # every score is computed before any decision, so the outcome does not
    # depend on evaluation order
    scores = sorted((s for s in scores if s[0] > cfg.T_S), key=lambda s: (-s[0], s[1], s[2]))
    det_to_track: dict[int, int] = {}
    used_tracks: set[int] = set()
    for _, di, ti in scores:
        if di in det_to_track or ti in used_tracks:
            continue
        det_to_track[di] = ti
        used_tracks.add(ti)

    assigned = []
    for di, det in enumerate(detections):
        if di in det_to_track:
            tid = propagated_tracks[det_to_track[di]].track_id
        else:
            tid = next_id
            next_id += 1
        assigned.append(TrackedHuman(tid, det, _bbox_or_all(det, cfg.T_J), Origin.DETECTED, 0))
    unmatched = [t for ti, t in enumerate(propagated_tracks) if ti not in used_tracks]
    return assigned, unmatched, next_id


def _extrapolate(last: Skeleton, before: Skeleton | None) -> Skeleton:
    if before is None:
        return last
    both = (last.scores > 0) & (before.scores > 0)
    joints = last.joints.copy()
    joints[both, :2] = 2.0 * last.xy[both] - before.xy[both]
    return Skeleton(joints)


def propagate_tracks(state: TrackerState, next_image=None, cfg: TrackerConfig | None = None) -> list[Skeleton]:
    """Predict where every live track's joints are in the incoming frame.

    With both the previous and the incoming image available the joints are
    followed with pyramidal Lucas-Kanade (joints lost by the flow get score
    0); otherwise each track is extrapolated at constant velocity from its
    last two skeletons.
    """
    cfg = cfg or TrackerConfig()
    prev_img = state.prev_frame_image
    if prev_img is not None and next_image is not None:
        prev_img = np.asarray(prev_img)
        next_image = np.asarray(next_image)
        if prev_img.shape != next_image.shape:
            raise ImageSizeMismatch(f"{prev_img.shape} vs {next_image.shape}")
        out = []
        for trk in state.live_tracks:
            joints = trk.skeleton.joints.copy()
            alive = joints[:, 2] > 0
            if alive.any():
                pos, ok = track_points(prev_img, next_image, joints[alive, :2], cfg.flow)
                idx = np.flatnonzero(alive)
                joints[idx[ok], :2] = pos[ok]
                joints[idx[~ok], 2] = 0.0
            out.append(Skeleton(joints))
        return out
    return [
        _extrapolate(trk.skeleton, state.previous_skeletons.get(trk.track_id))
        for trk in state.live_tracks
    ]


def tracker_step(state: TrackerState, detections, image=None, cfg: TrackerConfig | None = None) -> list[TrackedHuman]:
    """Advance the tracker by one frame and return every live human.

    Detected humans come first (in deduplicated order), followed by tracks
    coasting on predicted joints.
    """
    cfg = cfg or TrackerConfig()
    predicted = propagate_tracks(state, image, cfg)
    propagated = [
        TrackedHuman(t.track_id, sk, t.bbox, t.origin, t.age_frames)
        for t, sk in zip(state.live_tracks, predicted)
    ]
    kept = dedupe_detections(list(detections), cfg)
    assigned, unmatched, state.next_id = merge_with_tracks(kept, propagated, cfg, state.next_id)

    coasting = []
    for t in unmatched:
        age = t.age_frames + 1
        if age > cfg.max_coast_frames:
            continue
        coasting.append(TrackedHuman(t.track_id, t.skeleton, _bbox_or_all(t.skeleton, 0.0), Origin.TRACKED, age))

    last = {t.track_id: t.skeleton for t in state.live_tracks}
    live = assigned + coasting
    state.previous_skeletons = {t.track_id: last[t.track_id] for t in live if t.track_id in last}
    state.live_tracks = live
    if image is not None:
        state.prev_frame_image = np.asarray(image)
    return list(live)


class Tracker:
    """Stateful convenience wrapper around :func:`tracker_step`."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.state = TrackerState()

    def step(self, detections, image=None) -> list[TrackedHuman]:
        return tracker_step(self.state, detections, image, self.cfg)
