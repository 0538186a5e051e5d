"""Procedural idle / walk / wave pose sequences.

A kinematic stick figure is animated in 3D (body units: one unit is the
hip-to-neck length, +Y up, ground at Y = 0), viewed by a camera that can be
rotated about the vertical axis, and projected to pixels. Detection
artifacts (jitter, outliers, dropped joints) can be injected afterwards to
mimic pose-estimator output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pipeline_io import (
    DEFAULT_ACTIONS,
    DatasetManifest,
    Frame,
    HumanRecord,
    ManifestRow,
    PoseSequence,
    SequenceMeta,
    split_dataset,
    write_manifest,
    write_pose_sequence,
)
from .pose_core import NUM_JOINTS, JointId as J

ACTIONS = DEFAULT_ACTIONS

# bone lengths in body units
NECK_TO_NOSE = 0.35
SHOULDER_HALF = 0.38
HIP_HALF = 0.2
UPPER_ARM = 0.55
FOREARM = 0.5
THIGH = 0.85
SHIN = 0.85
LEG = THIGH + SHIN

# camera yaws of the six-view rig, in degrees
STANDARD_YAWS = (0.0, 30.0, -30.0, 60.0, -60.0, 180.0)
BASE_DISTANCE = 8.0  # body units between camera and subject at distance factor 1


@dataclass(frozen=True)
class MotionParams:
    action: str = "idle"
    fps: float = 30.0
    duration_s: float = 3.0
    body_scale: float = 90.0  # projected hip-to-neck length in pixels at distance factor 1
    gait_frequency: float = 1.8  # steps per second
    wave_frequency: float = 1.2
    wave_hand: str = "right"
    # per-joint positional tremor in pixels, added in 3D after the kinematics
    jitter_sigma: float = 0.0
    walk_direction: int = 1  # +1 walks toward +X (image left at yaw 0), -1 the other way
    seed: int = 0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ConfigError(f"unknown action {self.action!r}; choose from {ACTIONS}")
        if self.gait_frequency <= 0 or self.wave_frequency <= 0 or self.fps <= 0:
            raise ConfigError("frequencies must be positive")
        if self.body_scale <= 0 or self.jitter_sigma < 0:
            raise ConfigError("body_scale must be positive and jitter_sigma non-negative")
        if self.wave_hand not in ("left", "right"):
            raise ConfigError("wave_hand must be 'left' or 'right'")
        if self.walk_direction not in (1, -1):
            raise ConfigError("walk_direction must be +1 or -1")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))


@dataclass(frozen=True)
class CameraParams:
    yaw: float = 0.0  # degrees, rotation of the scene about the vertical axis
    distance_factor: float = 1.0
    principal_offset: tuple[float, float] = (0.0, 0.0)  # pixels from the image center
    image_w: int = 1280
    image_h: int = 720
    name: str = ""


@dataclass(frozen=True)
class NoiseParams:
    p_joint_drop: float = 0.0
    p_outlier: float = 0.0
    outlier_sigma: float = 0.0
    score_noise_sigma: float = 0.0
    jitter_sigma: float = 0.0
    # upper bound for the score a dropped joint receives; keep below T_J
    drop_score_max: float = 0.3

    def __post_init__(self):
        for name in ("p_joint_drop", "p_outlier"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if min(self.outlier_sigma, self.score_noise_sigma, self.jitter_sigma) < 0:
            raise ConfigError("noise magnitudes must be non-negative")


NOISY_PROFILE = NoiseParams(
    p_joint_drop=0.05, p_outlier=0.03, outlier_sigma=60.0, score_noise_sigma=0.08, jitter_sigma=1.0
)


@dataclass
class Pose3DSequence:
    joints: np.ndarray  # (T, 15, 3) body units
    root: np.ndarray  # (T, 3) hip center trajectory
    motion: MotionParams


# -- kinematics ------------------------------------------------------------------------

def _limb_dir(swing, abduct, forward, side, up):
    """Unit direction starting from straight down, swung toward ``forward``
    by ``swing`` and lifted toward ``side`` by ``abduct`` (radians, per frame)."""
    ca = np.cos(abduct)[:, None]
    return (
        -ca * np.cos(swing)[:, None] * up
        + ca * np.sin(swing)[:, None] * forward
        + np.sin(abduct)[:, None] * side
    )


def _assemble(root, forward, swing, abduct, lean):
    """Forward kinematics for all frames.

    ``swing``/``abduct`` map limb names to per-frame angles; ``forward`` is
    the (3,) facing direction in the ground plane.
    """
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    t = len(root)
    out = np.zeros((t, NUM_JOINTS, 3))
    spine = np.cos(lean)[:, None] * up + np.sin(lean)[:, None] * forward
    neck = root + spine
    out[:, J.HIP_CENTER] = root
    out[:, J.NECK] = neck
    out[:, J.NOSE] = neck + NECK_TO_NOSE * (0.97 * spine + 0.243 * forward)
    for side_name, sign in (("left", -1.0), ("right", 1.0)):
        side = sign * right
        shoulder = neck + SHOULDER_HALF * side - 0.06 * spine
        upper = _limb_dir(swing[f"{side_name}_upper"], abduct[f"{side_name}_upper"], forward, side, up)
        elbow = shoulder + UPPER_ARM * upper
        fore = _limb_dir(swing[f"{side_name}_fore"], abduct[f"{side_name}_fore"], forward, side, up)
        wrist = elbow + FOREARM * fore
        hip = root + HIP_HALF * side
        thigh = _limb_dir(swing[f"{side_name}_thigh"], abduct[f"{side_name}_thigh"], forward, side, up)
        knee = hip + THIGH * thigh
        shin = _limb_dir(swing[f"{side_name}_shin"], abduct[f"{side_name}_shin"], forward, side, up)
        ankle = knee + SHIN * shin
        names = ("SHOULDER", "ELBOW", "WRIST", "HIP", "KNEE", "ANKLE")
        for name, pos in zip(names, (shoulder, elbow, wrist, hip, knee, ankle)):
            out[:, J[f"{side_name.upper()}_{name}"]] = pos
    return out


def _standing(t, rng, n):
    """Relaxed standing angles with slow low-amplitude breathing/sway."""
    swing, abduct = {}, {}
    for side in ("left", "right"):
        ph = rng.uniform(0, 2 * np.pi)
        f = rng.uniform(0.2, 0.35)
        base_sw = rng.uniform(-0.05, 0.05)
        swing[f"{side}_upper"] = base_sw + 0.008 * np.sin(2 * np.pi * f * t + ph)
        swing[f"{side}_fore"] = swing[f"{side}_upper"] + rng.uniform(0.05, 0.2)
        abduct[f"{side}_upper"] = np.full(n, rng.uniform(0.06, 0.14))
        abduct[f"{side}_fore"] = abduct[f"{side}_upper"] - 0.03
        swing[f"{side}_thigh"] = np.zeros(n)
        swing[f"{side}_shin"] = np.zeros(n)
        abduct[f"{side}_thigh"] = np.full(n, 0.03)
        abduct[f"{side}_shin"] = np.full(n, 0.03)
    return swing, abduct


def generate_sequence(m: MotionParams) -> Pose3DSequence:
    """Animate one take of ``m.action`` in 3D."""
    n = m.n_frames
    if n < 2:
        raise ConfigError("a sequence needs at least 2 frames")
    rng = np.random.default_rng(m.seed)
    t = np.arange(n) / m.fps
    sway_f = rng.uniform(0.15, 0.3)
    sway_ph = rng.uniform(0, 2 * np.pi)
    sway = 0.008 * np.sin(2 * np.pi * sway_f * t + sway_ph)
    lean = np.full(n, rng.uniform(-0.03, 0.03))
    to_camera = np.array([0.0, 0.0, -1.0])

    if m.action == "walk":
        direction = float(m.walk_direction)
        forward = np.array([direction, 0.0, 0.0])
        stride_f = m.gait_frequency / 2.0
        amp = rng.uniform(0.23, 0.28)
        ph = 2 * np.pi * stride_f * t + rng.uniform(0, 2 * np.pi)
        step_len = 2 * LEG * np.sin(amp)
        speed = step_len * m.gait_frequency
        travel = speed * t - speed * t[-1] / 2.0
        root = np.stack([direction * travel, LEG + 0.03 * np.cos(2 * ph), np.zeros(n)], axis=1)
        swing, abduct = {}, {}
        for side, sgn in (("left", 1.0), ("right", -1.0)):
            leg_ph = sgn * np.sin(ph)
            swing[f"{side}_thigh"] = amp * leg_ph
            # knee bends while the leg swings forward
            knee = 0.5 * amp * (1 + np.cos(ph + (0 if sgn > 0 else np.pi)))
            swing[f"{side}_shin"] = swing[f"{side}_thigh"] - knee
            abduct[f"{side}_thigh"] = np.full(n, 0.02)
            abduct[f"{side}_shin"] = np.full(n, 0.02)
            swing[f"{side}_upper"] = -0.8 * amp * leg_ph
            swing[f"{side}_fore"] = swing[f"{side}_upper"] + 0.25
            abduct[f"{side}_upper"] = np.full(n, 0.08)
            abduct[f"{side}_fore"] = np.full(n, 0.05)
        lean = lean + 0.05
    else:
        forward = to_camera
        root = np.stack([sway, np.full(n, LEG), np.zeros(n)], axis=1)
        swing, abduct = _standing(t, rng, n)
        if m.action == "wave":
            hand = m.wave_hand
            ph = 2 * np.pi * m.wave_frequency * t + rng.uniform(0, 2 * np.pi)
            raise_ = rng.uniform(1.7, 2.0)
            abduct[f"{hand}_upper"] = np.full(n, raise_)
            swing[f"{hand}_upper"] = np.full(n, rng.uniform(0.0, 0.3))
            abduct[f"{hand}_fore"] = rng.uniform(2.7, 2.9) + rng.uniform(0.35, 0.5) * np.sin(ph)
            swing[f"{hand}_fore"] = np.full(n, rng.uniform(0.0, 0.3))

    joints = _assemble(root, forward, swing, abduct, lean)
    if m.jitter_sigma > 0:
        joints = joints + rng.normal(0.0, m.jitter_sigma / m.body_scale, joints.shape)
    return Pose3DSequence(joints, root, m)


# -- projection -------------------------------------------------------------------------------

def project(seq3d: Pose3DSequence, cam: CameraParams) -> PoseSequence:
    """Rotate the scene by ``cam.yaw`` about the vertical axis and project
    with a weak-perspective camera (one depth per frame, taken at the hip
    center) into pixels. Joints may land outside the image."""
    m = seq3d.motion
    yaw = math.radians(cam.yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    pts = seq3d.joints
    x = c * pts[..., 0] + s * pts[..., 2]
    y = pts[..., 1]
    root = seq3d.root
    root_z = -s * root[:, 0] + c * root[:, 2]
    dist = BASE_DISTANCE * cam.distance_factor
    depth = (dist + root_z)[:, None]
    focal = m.body_scale * BASE_DISTANCE
    cam_height = LEG + 0.5
    cx = cam.image_w / 2.0 + cam.principal_offset[0]
    cy = cam.image_h / 2.0 + cam.principal_offset[1]
    px = cx - focal * x / depth
    py = cy - focal * (y - cam_height) / depth
    frames = []
    for i in range(len(pts)):
        joints = np.column_stack([px[i], py[i], np.ones(NUM_JOINTS)])
        frames.append(Frame(i, [HumanRecord(joints)]))
    meta = SequenceMeta(
        source=f"synth:{m.action}:seed{m.seed}:{cam.name or f'yaw{cam.yaw:g}'}",
        fps=m.fps,
        image_w=cam.image_w,
        image_h=cam.image_h,
        action=m.action,
    )
    return PoseSequence(meta, frames)


def add_detection_noise(seq: PoseSequence, n: NoiseParams, rng: np.random.Generator) -> PoseSequence:
    """Perturb every joint of every human like an imperfect pose estimator.

    Per joint-frame: with ``p_joint_drop`` the score falls below
    ``drop_score_max``; with ``p_outlier`` the position jumps by a Gaussian
    of ``outlier_sigma``; positions always get ``jitter_sigma`` jitter and
    scores ``score_noise_sigma`` noise, clamped to [0, 1].
    """
    frames = []
    for fr in seq.frames:
        humans = []
        for h in fr.humans:
            j = np.array(h.joints, dtype=np.float64)
            u = rng.random((NUM_JOINTS, 2))
            outlier_shift = rng.normal(0.0, 1.0, (NUM_JOINTS, 2))
            jitter = rng.normal(0.0, 1.0, (NUM_JOINTS, 2))
            score_noise = rng.normal(0.0, 1.0, NUM_JOINTS)
            drop_score = rng.uniform(0.0, n.drop_score_max, NUM_JOINTS)
            outlier = u[:, 1] < n.p_outlier
            if n.jitter_sigma:
                j[:, :2] += n.jitter_sigma * jitter
            if outlier.any():
                j[outlier, :2] += n.outlier_sigma * outlier_shift[outlier]
            if n.score_noise_sigma:
                j[:, 2] = np.clip(j[:, 2] + n.score_noise_sigma * score_noise, 0.0, 1.0)
            drop = u[:, 0] < n.p_joint_drop
            j[drop, 2] = np.minimum(j[drop, 2], drop_score[drop])
            humans.append(HumanRecord(j, h.track_id))
        frames.append(Frame(fr.frame_index, humans))
    return PoseSequence(replace(seq.meta), frames)


# -- datasets -------------------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    actions: tuple[str, ...] = ACTIONS
    per_action: int = 10
    cameras: tuple[CameraParams, ...] = field(
        default_factory=lambda: tuple(CameraParams(yaw=y, name=f"cam{i}") for i, y in enumerate(STANDARD_YAWS[:2]))
    )
    duration_s: float = 3.0
    fps: float = 30.0
    noise: NoiseParams = NOISY_PROFILE
    left_hand_fraction: float = 0.25
    val_fraction: float = 0.33
    test_fraction: float = 0.2

    def __post_init__(self):
        bad = [a for a in self.actions if a not in ACTIONS]
        if bad:
            raise ConfigError(f"unknown action(s) {bad}; choose from {ACTIONS}")
        if self.per_action < 1 or not self.cameras:
            raise ConfigError("need at least one sequence per action and one camera")


def standard_cameras(count: int, **kw) -> tuple[CameraParams, ...]:
    if not 1 <= count <= len(STANDARD_YAWS):
        raise ConfigError(f"camera count must be 1..{len(STANDARD_YAWS)}")
    return tuple(CameraParams(yaw=y, name=f"cam{i}", **kw) for i, y in enumerate(STANDARD_YAWS[:count]))


def sample_motion(action: str, rng: np.random.Generator, spec: DatasetSpec, seed: int) -> MotionParams:
    return MotionParams(
        action=action,
        fps=spec.fps,
        duration_s=spec.duration_s,
        body_scale=90.0 * rng.uniform(0.85, 1.15),
        gait_frequency=1.8 * rng.uniform(0.85, 1.15),
        wave_frequency=1.2 * rng.uniform(0.8, 1.2),
        wave_hand="left" if rng.random() < spec.left_hand_fraction else "right",
        walk_direction=1 if rng.random() < 0.5 else -1,
        seed=seed,
    )


def build_dataset(spec: DatasetSpec, seed: int, out_dir) -> dict[str, DatasetManifest]:
    """Write clean and noisy pose files plus one manifest per variant.

    Every (action, take, camera) gets its own random stream derived from
    ``seed``, so the output does not depend on generation order. Both
    variants of a take share its split. Returns the manifests keyed
    ``clean``, ``noisy`` and ``combined`` (the union of the first two).
    """
    out = Path(out_dir)
    for variant in ("clean", "noisy"):
        (out / variant).mkdir(parents=True, exist_ok=True)
    rows = []
    for a_idx, action in enumerate(spec.actions):
        for k in range(spec.per_action):
            take = f"{action}_{k:04d}"
            rng = np.random.default_rng([seed, a_idx, k, 0])
            m = sample_motion(action, rng, spec, int(rng.integers(2**31)))
            seq3d = generate_sequence(m)
            for c_idx, cam in enumerate(spec.cameras):
                cam = replace(
                    cam,
                    distance_factor=cam.distance_factor * rng.uniform(0.9, 1.2),
                    principal_offset=(
                        cam.principal_offset[0] + rng.uniform(-60, 60),
                        cam.principal_offset[1] + rng.uniform(-30, 30),
                    ),
                )
                cam_tag = cam.name or f"cam{c_idx}"
                clean = project(seq3d, cam)
                noisy = add_detection_noise(clean, spec.noise, np.random.default_rng([seed, a_idx, k, c_idx + 1]))
                for variant, seq in (("clean", clean), ("noisy", noisy)):
                    rel = f"{variant}/{take}_{cam_tag}.jsonl"
                    seq.meta.source = f"{variant}/{take}_{cam_tag}"
                    write_pose_sequence(seq, out / rel)
                    rows.append(ManifestRow(rel, action, variant, "train", cam_tag, take))

    manifest = DatasetManifest(rows, spec.actions, out)
    manifest = split_dataset(manifest, {"val": spec.val_fraction, "test": spec.test_fraction}, seed)
    result = {
        "clean": manifest.select(variants=("clean",)),
        "noisy": manifest.select(variants=("noisy",)),
        "combined": manifest,
    }
    for name, man in result.items():
        write_manifest(man, out / f"manifest_{name}.csv")
    return result


def crossing_scenario(separation_px: float = 60.0, duration_s: float = 3.0, fps: float = 30.0,
                      body_scale: float = 90.0, seed: int = 0) -> PoseSequence:
    """Two walkers passing each other in opposite directions.

    Their paths are offset vertically by ``separation_px`` so that at the
    crossing point the closest joints are that far apart.
    """
    a = generate_sequence(MotionParams("walk", fps, duration_s, body_scale, walk_direction=1, seed=seed))
    b = generate_sequence(MotionParams("walk", fps, duration_s, body_scale, walk_direction=-1, seed=seed + 1))
    pa = project(a, CameraParams(principal_offset=(0.0, -separation_px / 2)))
    pb = project(b, CameraParams(principal_offset=(0.0, separation_px / 2)))
    frames = [
        Frame(fa.frame_index, [fa.humans[0], fb.humans[0]]) for fa, fb in zip(pa.frames, pb.frames)
    ]
    meta = SequenceMeta("synth:crossing", fps, pa.meta.image_w, pa.meta.image_h, "walk")
    return PoseSequence(meta, frames)


def spec_to_dict(spec: DatasetSpec) -> dict:
    return asdict(spec)
