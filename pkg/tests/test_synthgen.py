import numpy as np
import pytest

from ehpi_action.ehpi import encode_frame, mask_invalid_joints
from ehpi_action.errors import ConfigError
from ehpi_action.pipeline_io import read_manifest, sequence_windows
from ehpi_action.pose_core import JointId as J
from ehpi_action.synthgen import (
    ACTIONS,
    STANDARD_YAWS,
    CameraParams,
    DatasetSpec,
    MotionParams,
    NoiseParams,
    add_detection_noise,
    build_dataset,
    generate_sequence,
    project,
    standard_cameras,
)

BONES = [
    (J.NECK, J.NOSE), (J.HIP_CENTER, J.NECK),
    (J.LEFT_SHOULDER, J.LEFT_ELBOW), (J.LEFT_ELBOW, J.LEFT_WRIST),
    (J.RIGHT_SHOULDER, J.RIGHT_ELBOW), (J.RIGHT_ELBOW, J.RIGHT_WRIST),
    (J.LEFT_HIP, J.LEFT_KNEE), (J.LEFT_KNEE, J.LEFT_ANKLE),
    (J.RIGHT_HIP, J.RIGHT_KNEE), (J.RIGHT_KNEE, J.RIGHT_ANKLE),
    (J.NECK, J.LEFT_SHOULDER), (J.HIP_CENTER, J.RIGHT_HIP),
]


def _xy(seq):
    return np.stack([fr.humans[0].joints[:, :2] for fr in seq.frames])


@pytest.mark.parametrize("action", ACTIONS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bone_lengths_constant(action, seed):
    j = generate_sequence(MotionParams(action, seed=seed, wave_hand="left" if seed else "right")).joints
    for a, b in BONES:
        length = np.linalg.norm(j[:, a] - j[:, b], axis=1)
        assert np.ptp(length) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_idle_is_nearly_static(seed):
    m = MotionParams("idle", seed=seed)
    xy = _xy(project(generate_sequence(m), CameraParams()))
    assert xy.std(axis=0).max() < 0.02 * m.body_scale


@pytest.mark.parametrize("direction", [1, -1])
def test_walk_root_moves_monotonically(direction):
    seq = generate_sequence(MotionParams("walk", walk_direction=direction, seed=3))
    steps = np.diff(seq.root[:, 0]) * direction
    assert np.all(steps > 0)


@pytest.mark.parametrize("hand", ["right", "left"])
@pytest.mark.parametrize("seed", range(4))
def test_wave_hand_above_shoulder(hand, seed):
    xy = _xy(project(generate_sequence(MotionParams("wave", wave_hand=hand, seed=seed)), CameraParams()))
    other = "left" if hand == "right" else "right"
    up = lambda side: np.mean(xy[:, J[f"{side.upper()}_WRIST"], 1] < xy[:, J[f"{side.upper()}_SHOULDER"], 1])
    assert up(hand) >= 0.5
    assert up(other) < 0.5


def test_yaw_180_mirrors_about_principal_axis():
    seq3d = generate_sequence(MotionParams("wave", seed=1))
    cam = CameraParams(principal_offset=(37.0, -12.0))
    a = _xy(project(seq3d, cam))
    b = _xy(project(seq3d, CameraParams(yaw=180.0, principal_offset=(37.0, -12.0))))
    cx = 1280 / 2 + 37.0
    np.testing.assert_allclose(b[..., 0] - cx, -(a[..., 0] - cx), atol=1e-6)
    np.testing.assert_allclose(b[..., 1], a[..., 1], atol=1e-6)


def test_distance_doubling_halves_height():
    seq3d = generate_sequence(MotionParams("idle", seed=2))
    h = lambda d: np.ptp(_xy(project(seq3d, CameraParams(distance_factor=d)))[..., 1], axis=1).mean()
    assert h(2.0) / h(1.0) == pytest.approx(0.5, rel=0.01)


def test_six_cameras_give_distinct_sequences():
    seq3d = generate_sequence(MotionParams("walk", seed=4))
    views = [_xy(project(seq3d, cam)) for cam in standard_cameras(6)]
    assert len(STANDARD_YAWS) == 6
    for i in range(6):
        for k in range(i + 1, 6):
            assert not np.allclose(views[i], views[k])


def test_noise_off_is_identity():
    seq = project(generate_sequence(MotionParams("walk", seed=1)), CameraParams())
    out = add_detection_noise(seq, NoiseParams(), np.random.default_rng(0))
    np.testing.assert_array_equal(_xy(out), _xy(seq))
    assert all(np.array_equal(a.humans[0].joints, b.humans[0].joints) for a, b in zip(seq.frames, out.frames))


def test_full_drop_puts_all_scores_below_threshold():
    seq = project(generate_sequence(MotionParams("idle")), CameraParams())
    out = add_detection_noise(seq, NoiseParams(p_joint_drop=1.0), np.random.default_rng(0))
    assert max(fr.humans[0].joints[:, 2].max() for fr in out.frames) < 0.4


def test_outlier_rate_monte_carlo():
    m = MotionParams("idle", duration_s=6700 / 30)
    seq = project(generate_sequence(m), CameraParams())
    out = add_detection_noise(seq, NoiseParams(p_outlier=0.05, outlier_sigma=50.0), np.random.default_rng(1))
    moved = np.any(_xy(out) != _xy(seq), axis=-1)
    assert moved.size >= 100_000
    assert abs(moved.mean() - 0.05) <= 0.005


def test_motion_validation():
    for bad in ({"action": "jump"}, {"gait_frequency": 0}, {"body_scale": -1}, {"jitter_sigma": -1},
                {"wave_hand": "both"}):
        with pytest.raises(ConfigError):
            MotionParams(**bad)
    with pytest.raises(ConfigError):
        NoiseParams(p_outlier=2)
    with pytest.raises(ConfigError):
        generate_sequence(MotionParams(duration_s=1 / 30))


def test_clean_pipeline_is_deterministic():
    seq = project(generate_sequence(MotionParams("wave", seed=9)), CameraParams())
    a, b = sequence_windows(seq), sequence_windows(seq)
    assert np.array_equal(a.values, b.values)
    col, _ = encode_frame(mask_invalid_joints(seq.frames[0].humans[0].skeleton(), 1280, 720))
    assert col.shape == (15, 3)


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_build_dataset_counts_and_determinism(tmp_path):
    spec = DatasetSpec(per_action=10, cameras=standard_cameras(2), duration_s=1.0)
    mans = build_dataset(spec, 5, tmp_path / "a")
    assert len(mans["clean"].rows) == 60 and len(mans["noisy"].rows) == 60
    assert len(mans["combined"].rows) == len(mans["clean"].rows) + len(mans["noisy"].rows)
    assert len(list((tmp_path / "a" / "clean").glob("*.jsonl"))) == 60
    combined = read_manifest(tmp_path / "a" / "manifest_combined.csv")
    assert len(combined.rows) == 120
    # both variants of one take land in the same split
    split_of = {}
    for r in combined.rows:
        assert split_of.setdefault(r.take, r.split) == r.split
    build_dataset(spec, 5, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


@pytest.mark.filterwarnings("ignore:.*give no")
def test_every_frame_has_one_action(tmp_path):
    mans = build_dataset(DatasetSpec(per_action=2, cameras=standard_cameras(1), duration_s=1.0), 1, tmp_path)
    from ehpi_action.pipeline_io import read_pose_sequence

    for row in mans["combined"].rows:
        seq = read_pose_sequence(mans["combined"].resolve(row))
        assert seq.meta.action == row.action and row.action in ACTIONS
