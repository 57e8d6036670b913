import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from traj6d.errors import InputError
from traj6d.geometry import (
    CameraIntrinsics,
    DepthImage,
    PointCloud,
    RigidTransform,
    backproject,
    canonical_rotvec,
    compose,
    estimate_normals,
    invert,
    matrix_to_rotvec,
    perspective_project,
    rotvec_to_matrix,
    voxel_downsample,
)


def random_transform(rng, max_translation=1.0):
    rot = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rot, rng.uniform(-max_translation, max_translation, 3))


# ---------------------------------------------------------------- backproject


def test_backproject_principal_ray():
    depth = DepthImage(np.array([[2.0]]))
    intr = CameraIntrinsics(fx=1, fy=1, cx=0, cy=0, width=1, height=1)
    cloud = backproject(depth, intr)
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 2.0]])


def test_backproject_principal_point():
    intr = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=640, height=480)
    depth = np.zeros((480, 640))
    depth[240, 320] = 1.5
    cloud = backproject(DepthImage(depth), intr)
    np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 1.5]])


def test_backproject_off_axis_pixel():
    intr = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240, width=1024, height=480)
    depth = np.zeros((480, 1024))
    depth[240, 820] = 2.0
    cloud = backproject(DepthImage(depth), intr)
    # (820 - 320) / 500 * 2.0 = 2.0
    np.testing.assert_allclose(cloud.points, [[2.0, 0.0, 2.0]])


def test_backproject_skips_invalid_depth():
    intr = CameraIntrinsics(fx=10, fy=10, cx=1, cy=1, width=3, height=2)
    depth = np.array([[0.0, -1.0, np.nan], [np.inf, 0.5, 0.0]])
    cloud = backproject(DepthImage(depth), intr)
    assert len(cloud) == 1
    np.testing.assert_allclose(cloud.points[0, 2], 0.5)


def test_backproject_all_invalid_is_empty():
    intr = CameraIntrinsics(fx=10, fy=10, cx=1, cy=1, width=3, height=2)
    cloud = backproject(DepthImage(np.zeros((2, 3))), intr)
    assert len(cloud) == 0


def test_backproject_dimension_mismatch():
    intr = CameraIntrinsics(fx=10, fy=10, cx=1, cy=1, width=4, height=2)
    with pytest.raises(InputError):
        backproject(DepthImage(np.ones((2, 3))), intr)
    with pytest.raises(InputError):
        backproject(
            DepthImage(np.ones((2, 4))), intr, colors=np.zeros((2, 3, 3))
        )


def test_backproject_copies_colors():
    intr = CameraIntrinsics(fx=10, fy=10, cx=1, cy=1, width=3, height=2)
    depth = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]])
    colors = np.arange(18, dtype=float).reshape(2, 3, 3) / 18.0
    cloud = backproject(DepthImage(depth), intr, colors=colors)
    np.testing.assert_allclose(cloud.colors[0], colors[0, 0])
    np.testing.assert_allclose(cloud.colors[1], colors[0, 2])
    np.testing.assert_allclose(cloud.colors[2], colors[1, 1])


def test_backproject_project_roundtrip():
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics(fx=420, fy=380, cx=160, cy=120, width=320, height=240)
    depth = rng.uniform(0.5, 4.0, size=(240, 320))
    depth[rng.random((240, 320)) < 0.3] = 0.0  # holes
    cloud = backproject(DepthImage(depth), intr)
    uv = perspective_project(cloud.points, intr)
    jj, ii = np.nonzero(depth > 0)
    np.testing.assert_allclose(uv[:, 0], ii, atol=1e-6)
    np.testing.assert_allclose(uv[:, 1], jj, atol=1e-6)


# ------------------------------------------------------------------- normals


def test_normals_on_plane():
    rng = np.random.default_rng(1)
    pts = np.column_stack(
        [rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200), np.ones(200)]
    )
    cloud = estimate_normals(PointCloud(pts), k=12)
    np.testing.assert_allclose(cloud.normals, np.tile([0, 0, -1.0], (200, 1)), atol=1e-9)


def test_normals_on_sphere_match_radial_oracle():
    # analytic sphere normals are the oracle: unit radial direction
    rng = np.random.default_rng(2)
    center = np.array([0.0, 0.0, 3.0])
    dirs = rng.normal(size=(10_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cloud = estimate_normals(PointCloud(center + dirs), k=10)
    alignment = np.abs(np.einsum("ni,ni->n", cloud.normals, dirs))
    assert np.all(alignment >= np.cos(np.radians(5.0)))


def test_normals_oriented_toward_camera():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0.5, 2.0, size=(500, 3))
    cloud = estimate_normals(PointCloud(pts), k=8)
    assert np.all(np.einsum("ni,ni->n", cloud.normals, -cloud.points) >= 0)


def test_normals_too_few_points():
    with pytest.raises(InputError):
        estimate_normals(PointCloud(np.zeros((5, 3))), k=10)


# -------------------------------------------------------------- downsampling


def test_voxel_downsample_merges_close_points():
    cloud = PointCloud([[0.002, 0.002, 0.002], [0.003, 0.002, 0.002]])
    out = voxel_downsample(cloud, 0.01)
    assert len(out) == 1
    np.testing.assert_allclose(out.points[0], [0.0025, 0.002, 0.002])


def test_voxel_downsample_keeps_separated_points():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 1, (300, 3))
    keys = np.floor(pts / 0.05)
    pts = pts[np.unique(keys, axis=0, return_index=True)[1]]  # one per voxel
    out = voxel_downsample(PointCloud(pts), 0.05)
    assert len(out) == len(pts)


def test_voxel_downsample_grid_count_matches_bruteforce():
    # independent oracle: python-set voxel hash of the same points
    side = np.arange(100) * 0.005
    pts = np.stack(np.meshgrid(side, side, side, indexing="ij"), axis=-1).reshape(-1, 3)
    voxel = 0.01
    expected = len({(int(np.floor(x / voxel)), int(np.floor(y / voxel)), int(np.floor(z / voxel)))
                    for x, y, z in pts})
    out = voxel_downsample(PointCloud(pts), voxel)
    assert len(out) == expected


def test_voxel_downsample_averages_attributes():
    cloud = PointCloud(
        [[0.001, 0, 0], [0.002, 0, 0]],
        colors=[[1, 0, 0], [0, 1, 0]],
        normals=[[1, 0, 0], [0, 1, 0]],
    )
    out = voxel_downsample(cloud, 0.01)
    np.testing.assert_allclose(out.colors[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(np.linalg.norm(out.normals[0]), 1.0)


def test_voxel_downsample_rejects_bad_voxel():
    with pytest.raises(InputError):
        voxel_downsample(PointCloud(np.zeros((1, 3))), 0.0)


# ---------------------------------------------------------- rigid transforms


def test_compose_with_identity():
    rng = np.random.default_rng(5)
    t = random_transform(rng)
    out = compose(RigidTransform.identity(), t)
    np.testing.assert_allclose(out.matrix, t.matrix, atol=1e-12)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(6)
    t = random_transform(rng)
    out = compose(t, invert(t))
    np.testing.assert_allclose(out.matrix, np.eye(4), atol=1e-9)


def test_compose_matches_sequential_application():
    rng = np.random.default_rng(7)
    for _ in range(20):
        t1, t2 = random_transform(rng), random_transform(rng)
        pts = rng.normal(size=(10, 3))
        np.testing.assert_allclose(
            compose(t1, t2).apply(pts), t1.apply(t2.apply(pts)), atol=1e-12
        )


def test_compose_associative():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a, b, c = (random_transform(rng) for _ in range(3))
        m1 = compose(compose(a, b), c).matrix
        m2 = compose(a, compose(b, c)).matrix
        np.testing.assert_allclose(m1, m2, atol=1e-9)


def test_invert_trivials():
    ident = RigidTransform.identity()
    np.testing.assert_allclose(invert(ident).matrix, np.eye(4))
    t = RigidTransform(np.eye(3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(invert(t).translation, [-1.0, -2.0, -3.0])


def test_rigid_transform_validation():
    with pytest.raises(InputError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(InputError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1


# ------------------------------------------------------------ axis-angle


def test_rotvec_zero_is_identity():
    np.testing.assert_allclose(rotvec_to_matrix([0, 0, 0]), np.eye(3))


def test_rotvec_quarter_turn_about_z():
    rot = rotvec_to_matrix([0, 0, np.pi / 2])
    np.testing.assert_allclose(rot @ [1, 0, 0], [0, 1, 0], atol=1e-12)


def test_rotvec_roundtrip_against_quaternion_oracle():
    # oracle: scipy's quaternion-based conversion, independent of our Rodrigues
    rng = np.random.default_rng(9)
    axes = rng.normal(size=(1000, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(1e-8, np.pi - 1e-6, 1000)
    for axis, angle in zip(axes, angles):
        r = axis * angle
        rot = rotvec_to_matrix(r)
        np.testing.assert_allclose(rot, Rotation.from_rotvec(r).as_matrix(), atol=1e-12)
        back = matrix_to_rotvec(rot)
        assert np.linalg.norm(back - r) <= 1e-9


def test_matrix_to_rotvec_rejects_non_rotation():
    with pytest.raises(InputError):
        matrix_to_rotvec(np.eye(3) * 1.1)


def test_rotvec_near_pi_branch():
    rng = np.random.default_rng(10)
    for _ in range(200):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.pi - 10 ** rng.uniform(-12, -4)
        r = axis * angle
        back = matrix_to_rotvec(rotvec_to_matrix(r))
        oracle = Rotation.from_matrix(rotvec_to_matrix(r)).as_rotvec()
        # both encode the same rotation even if the branch differs
        np.testing.assert_allclose(
            rotvec_to_matrix(back), rotvec_to_matrix(oracle), atol=1e-9
        )
        assert np.linalg.norm(back) <= np.pi + 1e-12


def test_canonical_rotvec_wraps_angle():
    r = np.array([0.0, 0.0, 1.5 * np.pi])
    wrapped = canonical_rotvec(r)
    np.testing.assert_allclose(wrapped, [0, 0, -0.5 * np.pi], atol=1e-12)
    np.testing.assert_allclose(
        rotvec_to_matrix(wrapped), rotvec_to_matrix(r), atol=1e-12
    )


def test_canonical_rotvec_pi_sign_rule():
    a = canonical_rotvec(np.array([0.0, np.pi, 0.0]))
    b = canonical_rotvec(np.array([0.0, -np.pi, 0.0]))
    np.testing.assert_allclose(a, b)
    assert a[1] > 0


@settings(max_examples=200)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_rotation_outputs_are_proper(r):
    rot = rotvec_to_matrix(np.array(r))
    assert np.max(np.abs(rot.T @ rot - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(rot) - 1.0) < 1e-9


@settings(max_examples=200)
@given(
    st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
    st.floats(1e-6, np.pi - 1e-6),
)
def test_rotvec_roundtrip_property(direction, angle):
    d = np.array(direction)
    n = np.linalg.norm(d)
    if n < 1e-3:
        return
    r = d / n * angle
    assert np.linalg.norm(matrix_to_rotvec(rotvec_to_matrix(r)) - r) <= 1e-9
