"""Core 3D types and operations: back-projection, normals, voxel downsampling,
rigid-transform algebra and axis-angle conversions.

Conventions: pixel (i, j) = (column, row); camera looks down +z; all lengths
in meters, angles in radians. Rotation vectors are plain (3,) arrays encoding
axis * angle, canonicalized to an angle in [0, pi].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError

EPS_ANGLE = 1e-7


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point outside image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth map in meters. Zero or non-finite entries mean
    "no depth" and are skipped by all consumers."""

    values: np.ndarray  # (H, W) float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"depth must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)


class PointCloud:
    """Colored 3D point set with optional unit normals.

    ``points`` is (N, 3); ``colors`` (RGB in [0, 1]) and ``normals`` are
    optional parallel (N, 3) arrays.
    """

    __slots__ = ("points", "colors", "normals")

    def __init__(self, points, colors=None, normals=None):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.points = points
        self.colors = None
        self.normals = None
        if colors is not None:
            colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
            if len(colors) != len(points):
                raise InputError("colors not parallel to points")
            self.colors = colors
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(points):
                raise InputError("normals not parallel to points")
            norms = np.linalg.norm(normals, axis=1)
            if len(normals) and np.any(np.abs(norms - 1.0) > 1e-6):
                raise InputError("normals must have unit length")
            self.normals = normals

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, t: "RigidTransform") -> "PointCloud":
        """Rigidly transformed copy; normals rotate, colors carry over."""
        normals = None if self.normals is None else self.normals @ t.rotation.T
        return PointCloud(t.apply(self.points), colors=self.colors, normals=normals)

    def select(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index],
            colors=None if self.colors is None else self.colors[index],
            normals=None if self.normals is None else self.normals[index],
        )


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: x -> rotation @ x + translation."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise InputError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """(self o other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def backproject(
    depth: DepthImage,
    intrinsics: CameraIntrinsics,
    colors: np.ndarray | None = None,
) -> PointCloud:
    """Lift every valid-depth pixel to a 3D point: d * K^-1 * [i, j, 1]^T.

    ``colors`` is an optional (H, W, 3) RGB image in [0, 1]; matching pixels
    are copied onto the cloud. All-invalid depth yields an empty cloud.
    """
    if depth.width != intrinsics.width or depth.height != intrinsics.height:
        raise InputError(
            f"depth {depth.width}x{depth.height} does not match intrinsics "
            f"{intrinsics.width}x{intrinsics.height}"
        )
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        if colors.shape[:2] != (depth.height, depth.width):
            raise InputError("color image does not match depth dimensions")
    valid = depth.valid_mask()
    jj, ii = np.nonzero(valid)  # j = row, i = column
    d = depth.values[jj, ii]
    x = d * (ii - intrinsics.cx) / intrinsics.fx
    y = d * (jj - intrinsics.cy) / intrinsics.fy
    pts = np.column_stack([x, y, d])
    return PointCloud(pts, colors=None if colors is None else colors[jj, ii])


def perspective_project(
    points: np.ndarray, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Project camera-frame points to pixel coordinates (i, j). No z check."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    u = intrinsics.fx * points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def estimate_normals(cloud: PointCloud, k: int = 30) -> PointCloud:
    """Per-point normals from the k-NN covariance, oriented toward the camera
    origin (dot(normal, -point) >= 0). Returns a new cloud."""
    n = len(cloud)
    if n < k + 1:
        raise InputError(f"need at least k+1={k + 1} points, got {n}")
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=k + 1)
    neigh = cloud.points[idx]  # (N, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    # smallest-eigenvalue eigenvector of each local covariance
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = np.einsum("ni,ni->n", normals, cloud.points) > 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(cloud.points, colors=cloud.colors, normals=normals)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One point per occupied voxel: centroid of members, attributes averaged
    (normals renormalized). Output order follows first occurrence."""
    if voxel <= 0:
        raise InputError("voxel size must be positive")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    # keep first-occurrence ordering so downsampling is deterministic
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    inverse = rank[inverse]
    counts = counts[order]

    def group_mean(values):
        acc = np.zeros((len(counts), values.shape[1]))
        np.add.at(acc, inverse, values)
        return acc / counts[:, None]

    points = group_mean(cloud.points)
    colors = None if cloud.colors is None else group_mean(cloud.colors)
    normals = None
    if cloud.normals is not None:
        normals = group_mean(cloud.normals)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        # averaged normals can cancel; fall back to the first member's normal
        bad = norms[:, 0] < 1e-12
        if np.any(bad):
            firsts = first[order]
            normals[bad] = cloud.normals[firsts[bad]]
            norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / norms
    return PointCloud(points, colors=colors, normals=normals)


def _canonical_pi_axis(axis: np.ndarray) -> np.ndarray:
    """At angle exactly pi both axis signs encode the same rotation; pick the
    one whose first nonzero component is positive."""
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def canonical_rotvec(r: np.ndarray) -> np.ndarray:
    """Wrap a rotation vector to angle in [0, pi], fixing the sign at pi."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(r)
    if angle < np.pi:
        return r.copy()
    axis = r / angle
    angle = np.mod(angle, 2.0 * np.pi)
    if angle > np.pi:
        angle = 2.0 * np.pi - angle
        axis = -axis
    if angle == np.pi:
        axis = _canonical_pi_axis(axis)
    return axis * angle


def rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(r)
    if angle < EPS_ANGLE:
        # second-order expansion keeps round-trips tight near identity
        k = _cross_matrix(r)
        return np.eye(3) + k + 0.5 * (k @ k)
    k = _cross_matrix(r / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def matrix_to_rotvec(rot: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues with the antipodal (angle ~ pi) branch handled.

    Requires a proper rotation; raises InputError otherwise.
    """
    rot = np.asarray(rot, dtype=np.float64).reshape(3, 3)
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-8 or np.linalg.det(rot) < 0:
        raise InputError("matrix is not a proper rotation")
    vee = 0.5 * np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )  # = sin(angle) * axis
    s = np.linalg.norm(vee)
    c = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    # atan2 keeps the angle well-conditioned at both ends, unlike arccos
    angle = np.arctan2(s, c)
    if angle < EPS_ANGLE:
        # sin(a)/a ~ 1 - a^2/6; invert the series
        return vee * (1.0 + angle * angle / 6.0)
    if c > -0.9:
        return vee * (angle / s)
    # angle ~ pi: the skew part vanishes, so take the axis from the symmetric
    # part a a^T = ((R + R^T)/2 - c I) / (1 - c) and the sign from vee
    b = ((rot + rot.T) / 2.0 - c * np.eye(3)) / (1.0 - c)
    k = int(np.argmax(np.diag(b)))
    axis = b[:, k]
    axis /= np.linalg.norm(axis)
    if s > 1e-12:
        if np.dot(axis, vee) < 0:
            axis = -axis
    else:
        axis = _canonical_pi_axis(axis)
    return axis * angle


def _cross_matrix(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )
