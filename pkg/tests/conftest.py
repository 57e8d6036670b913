import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from traj6d.geometry import PointCloud, RigidTransform, estimate_normals


def sample_box_surface(rng, center, extents, n):
    """Uniform points on the surface of an axis-aligned box."""
    ex, ey, ez = np.asarray(extents) / 2.0
    areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, n)
    v = rng.uniform(-1, 1, n)
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * (ex, ey, ez)[axis]
        pts[m, others[0]] = u[m] * (ex, ey, ez)[others[0]]
        pts[m, others[1]] = v[m] * (ex, ey, ez)[others[1]]
    return pts + np.asarray(center)


def make_structured_cloud(seed=0, n=9000, with_normals=True):
    """Room-like colored cloud: three orthogonal walls plus clutter boxes.

    Enough geometric and photometric variation for FPFH matching and the
    colored-ICP photometric term to be meaningful.
    """
    rng = np.random.default_rng(seed)
    n_wall = n // 5
    walls = []
    u = rng.uniform(-1.0, 1.0, n_wall)
    v = rng.uniform(0.5, 2.5, n_wall)
    walls.append(np.column_stack([u, v - 1.5, np.full(n_wall, 2.5)]))  # back
    u = rng.uniform(-1.0, 1.0, n_wall)
    v = rng.uniform(0.5, 2.5, n_wall)
    walls.append(np.column_stack([np.full(n_wall, -1.2), u, v]))  # left
    u = rng.uniform(-1.2, 1.2, n_wall)
    v = rng.uniform(0.5, 2.5, n_wall)
    walls.append(np.column_stack([u, np.full(n_wall, 1.0), v]))  # floor
    pts = [np.concatenate(walls)]
    n_clutter = n - 3 * n_wall
    n_box = n_clutter // 4
    for _ in range(4):
        center = rng.uniform([-0.8, -0.5, 1.0], [0.8, 0.8, 2.2])
        extents = rng.uniform(0.15, 0.45, 3)
        box = sample_box_surface(rng, center, extents, n_box)
        rot = Rotation.random(random_state=rng).as_matrix()
        pts.append((box - center) @ rot.T + center)
    pts = np.concatenate(pts)
    colors = 0.5 + 0.35 * np.sin(pts * np.array([3.1, 2.3, 1.7]) + np.array([0, 2, 4]))
    colors = np.clip(colors + rng.normal(0, 0.02, colors.shape), 0, 1)
    cloud = PointCloud(pts, colors=colors)
    if with_normals:
        cloud = estimate_normals(cloud, k=20)
    return cloud


def random_rigid(rng, max_angle=np.pi, max_translation=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    rot = Rotation.from_rotvec(axis * angle).as_matrix()
    return RigidTransform(rot, rng.uniform(-max_translation, max_translation, 3))


def rotation_angle_between(r1, r2):
    """Geodesic angle between two rotation matrices (quaternion path)."""
    q1 = Rotation.from_matrix(r1).as_quat()
    q2 = Rotation.from_matrix(r2).as_quat()
    return 2.0 * np.arccos(np.clip(abs(np.dot(q1, q2)), -1.0, 1.0))


@pytest.fixture(scope="session")
def structured_cloud():
    return make_structured_cloud(seed=11)
