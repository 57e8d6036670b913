import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from traj6d.errors import InputError
from traj6d.geometry import CameraIntrinsics
from traj6d.metrics import (
    EvaluationReport,
    TrajectoryPair,
    ade,
    evaluate_batch,
    fde,
    geodesic_distance,
    normalize_length,
    trajectory_gd,
)

INTR = CameraIntrinsics(fx=200.0, fy=180.0, cx=80.0, cy=60.0, width=160, height=120)


def poses_from_positions(positions, rotations=None):
    positions = np.atleast_2d(positions)
    out = np.zeros((len(positions), 6))
    out[:, :3] = positions
    if rotations is not None:
        out[:, 3:] = rotations
    return out


def random_pair(rng, n=8):
    pred = poses_from_positions(
        rng.uniform(-0.3, 0.3, (n, 3)) + [0, 0, 1.5],
        rng.normal(0, 0.4, (n, 3)),
    )
    ref = poses_from_positions(
        rng.uniform(-0.3, 0.3, (n, 3)) + [0, 0, 1.5],
        rng.normal(0, 0.4, (n, 3)),
    )
    return TrajectoryPair(pred, ref, INTR)


# ------------------------------------------------------------ normalize_length


def test_normalize_equal_lengths_unchanged():
    poses = poses_from_positions(np.arange(15).reshape(5, 3))
    np.testing.assert_array_equal(normalize_length(poses, 5), poses)


def test_normalize_pads_with_final_pose():
    poses = poses_from_positions(np.arange(9).reshape(3, 3))
    out = normalize_length(poses, 5)
    assert out.shape == (5, 6)
    np.testing.assert_array_equal(out[3], poses[2])
    np.testing.assert_array_equal(out[4], poses[2])
    np.testing.assert_array_equal(out[:3], poses)


def test_normalize_cuts_to_reference_length():
    poses = poses_from_positions(np.arange(21).reshape(7, 3))
    out = normalize_length(poses, 5)
    np.testing.assert_array_equal(out, poses[:5])


def test_normalize_empty_prediction_errors():
    with pytest.raises(InputError):
        normalize_length(np.empty((0, 6)), 5)


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    poses = poses_from_positions(rng.normal(size=(4, 3)))
    once = normalize_length(poses, 6)
    twice = normalize_length(once, 6)
    np.testing.assert_array_equal(once, twice)


# ---------------------------------------------------------------------- ADE


def test_ade_identical_is_zero():
    rng = np.random.default_rng(1)
    pair = random_pair(rng)
    same = TrajectoryPair(pair.reference, pair.reference, INTR)
    assert ade(same, "3d") == 0.0
    assert ade(same, "2d") == 0.0


def test_ade_constant_offset():
    rng = np.random.default_rng(2)
    ref = poses_from_positions(rng.uniform(-1, 1, (6, 3)))
    pred = ref.copy()
    pred[:, 0] += 0.3
    assert ade(TrajectoryPair(pred, ref)) == pytest.approx(0.3, abs=1e-12)


def test_ade_matches_bruteforce_oracle():
    rng = np.random.default_rng(3)
    pair = random_pair(rng)
    total = 0.0
    for p, r in zip(pair.predicted, pair.reference):
        total += np.sqrt(sum((p[i] - r[i]) ** 2 for i in range(3)))
    assert ade(pair, "3d") == pytest.approx(total / len(pair.reference), abs=1e-12)


def test_ade_2d_matches_projection_oracle():
    rng = np.random.default_rng(4)
    pair = random_pair(rng)
    total = 0.0
    for p, r in zip(pair.predicted, pair.reference):
        up = (INTR.fx * p[0] / p[2] + INTR.cx) / INTR.width
        vp = (INTR.fy * p[1] / p[2] + INTR.cy) / INTR.height
        ur = (INTR.fx * r[0] / r[2] + INTR.cx) / INTR.width
        vr = (INTR.fy * r[1] / r[2] + INTR.cy) / INTR.height
        total += np.hypot(up - ur, vp - vr)
    assert ade(pair, "2d") == pytest.approx(total / len(pair.reference), abs=1e-12)


def test_ade_2d_rejects_nonpositive_depth():
    pred = poses_from_positions([[0, 0, 1.0], [0, 0, -0.5]])
    pair = TrajectoryPair(pred, pred, INTR)
    with pytest.raises(InputError):
        ade(pair, "2d")


def test_ade_requires_normalized_lengths():
    pred = poses_from_positions([[0, 0, 1.0]])
    ref = poses_from_positions([[0, 0, 1.0], [0, 0, 1.2]])
    with pytest.raises(InputError):
        ade(TrajectoryPair(pred, ref))


def test_ade_translation_equivariance():
    rng = np.random.default_rng(5)
    pair = random_pair(rng)
    shift = np.zeros(6)
    shift[:3] = [0.7, -0.2, 0.4]
    shifted = TrajectoryPair(pair.predicted + shift, pair.reference + shift, INTR)
    assert abs(ade(pair, "3d") - ade(shifted, "3d")) < 1e-12
    assert abs(fde(pair, "3d") - fde(shifted, "3d")) < 1e-12


# ---------------------------------------------------------------------- FDE


def test_fde_identical_is_zero():
    rng = np.random.default_rng(6)
    pair = random_pair(rng)
    assert fde(TrajectoryPair(pair.reference, pair.reference, INTR)) == 0.0


def test_fde_final_offset_relation_to_ade():
    rng = np.random.default_rng(7)
    ref = poses_from_positions(rng.uniform(-1, 1, (5, 3)))
    pred = ref.copy()
    pred[-1, 1] += 0.5
    pair = TrajectoryPair(pred, ref)
    assert fde(pair) == pytest.approx(0.5, abs=1e-12)
    assert ade(pair) == pytest.approx(0.5 / 5, abs=1e-12)


def test_fde_matches_direct_oracle():
    rng = np.random.default_rng(8)
    pair = random_pair(rng)
    expected = np.linalg.norm(pair.predicted[-1, :3] - pair.reference[-1, :3])
    assert fde(pair, "3d") == pytest.approx(expected, abs=1e-12)


def test_fde_equals_ade_for_length_one():
    pred = poses_from_positions([[0.4, 0.1, 1.0]])
    ref = poses_from_positions([[0.0, 0.0, 1.0]])
    pair = TrajectoryPair(pred, ref)
    assert fde(pair) == ade(pair)


# ----------------------------------------------------------------------- GD


def test_gd_identical_rotations():
    assert geodesic_distance([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == 0.0


def test_gd_identity_vs_pi_is_exactly_pi():
    assert geodesic_distance([0.0, 0.0, np.pi], [0.0, 0.0, 0.0]) == np.pi


def test_gd_matches_quaternion_oracle():
    rng = np.random.default_rng(9)
    for _ in range(200):
        r1 = Rotation.random(random_state=rng)
        r2 = Rotation.random(random_state=rng)
        expected = 2.0 * np.arccos(
            np.clip(abs(np.dot(r1.as_quat(), r2.as_quat())), -1.0, 1.0)
        )
        got = geodesic_distance(r1.as_rotvec(), r2.as_rotvec())
        assert abs(got - expected) < 1e-9


def test_gd_symmetric_and_bounded():
    rng = np.random.default_rng(10)
    for _ in range(100):
        a = rng.normal(0, 1, 3)
        b = rng.normal(0, 1, 3)
        d1 = geodesic_distance(a, b)
        d2 = geodesic_distance(b, a)
        assert abs(d1 - d2) < 1e-12
        assert 0.0 <= d1 <= np.pi


def test_gd_clamping_never_nan():
    # antipodal pair: the trace argument can dip below -1 numerically
    rng = np.random.default_rng(11)
    for _ in range(100):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        d = geodesic_distance(axis * np.pi, -axis * np.pi)
        assert np.isfinite(d)


def test_trajectory_gd_is_timestep_mean():
    pred = np.zeros((3, 6))
    ref = np.zeros((3, 6))
    pred[1, 3:] = [0, 0, np.pi / 2]
    pred[2, 3:] = [0, 0, np.pi]
    pair = TrajectoryPair(pred, ref)
    assert trajectory_gd(pair) == pytest.approx((0 + np.pi / 2 + np.pi) / 3)


@settings(max_examples=100)
@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
def test_gd_self_distance_zero(r):
    # arccos near trace 3 resolves to ~sqrt(eps); 1e-7 is the honest bound
    assert geodesic_distance(r, r) <= 1e-7


# ------------------------------------------------------------- batch reports


def test_evaluate_batch_single_identical_pair():
    ref = poses_from_positions([[0, 0, 1.0], [0.1, 0, 1.1]])
    report = evaluate_batch([TrajectoryPair(ref, ref, INTR)])
    assert all(v == 0.0 for v in report.means.values())
    assert len(report.rows) == 1


def test_evaluate_batch_best_of_three():
    ref = poses_from_positions([[0, 0, 1.0], [0.1, 0, 1.1]])
    bad = ref.copy()
    bad[:, 0] += 0.4
    pairs = [
        TrajectoryPair(bad, ref, INTR),
        TrajectoryPair(ref, ref, INTR),  # the perfect sample
        TrajectoryPair(bad, ref, INTR),
    ]
    report = evaluate_batch(pairs, instance_ids=["clip0"] * 3)
    assert len(report.rows) == 1
    assert report.means["ade3d"] == 0.0


def test_evaluate_batch_means_match_hand_sum():
    rng = np.random.default_rng(12)
    pairs = [random_pair(rng) for _ in range(3)]
    report = evaluate_batch(pairs)
    expected = np.mean([ade(p.normalized(), "3d") for p in pairs])
    assert report.means["ade3d"] == pytest.approx(expected, abs=1e-12)
    expected_gd = np.mean([trajectory_gd(p.normalized()) for p in pairs])
    assert report.means["gd"] == pytest.approx(expected_gd, abs=1e-12)


def test_evaluate_batch_normalizes_lengths():
    ref = poses_from_positions([[0, 0, 1.0], [0.1, 0, 1.1], [0.2, 0, 1.2]])
    short = poses_from_positions([[0, 0, 1.0]])
    report = evaluate_batch([TrajectoryPair(short, ref, INTR)])
    # padded prediction repeats pose 0; errors at steps 1, 2 are nonzero
    assert report.means["ade3d"] > 0


def test_evaluate_batch_without_intrinsics_drops_2d_columns():
    ref = poses_from_positions([[0, 0, 1.0], [0.1, 0, 1.1]])
    report = evaluate_batch([TrajectoryPair(ref, ref, None)])
    assert report.rows[0].ade2d is None
    assert report.means["ade2d"] is None


def test_report_text_table_is_aligned():
    ref = poses_from_positions([[0, 0, 1.0], [0.1, 0, 1.1]])
    report = evaluate_batch([TrajectoryPair(ref, ref, INTR)])
    text = report.to_text()
    lines = text.splitlines()
    assert lines[0].split() == ["instance", "ADE3D", "FDE3D", "ADE2D", "FDE2D", "GD"]
    assert len({len(l) for l in lines}) == 1  # constant width

    parsed = report.to_dict()
    assert parsed["mean"]["ade3d"] == 0.0
