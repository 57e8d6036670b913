"""From perception outputs to 6DoF object trajectories.

Consumes segmentation masks, detection boxes and 3D point tracks together
with chained camera extrinsics; produces per-frame object poses (centroid
position + SVD-estimated rotation) in the start-frame camera coordinate
system, an oriented bounding box at t0, and curation verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import CurationReject, DegenerateGeometryError, InputError
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    matrix_to_rotvec,
    perspective_project,
)

MIN_BOX_EXTENT = 1e-3  # degeneracy floor for flat/thin point sets, meters


@dataclass(frozen=True)
class TrackSet:
    """Dense 3D tracks: per-frame, per-point positions with visibility."""

    positions: np.ndarray  # (T, P, 3) meters, per-frame camera coordinates
    visibility: np.ndarray  # (T, P) bool
    frame_timestamps: np.ndarray  # (T,) seconds, strictly increasing

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        vis = np.asarray(self.visibility, dtype=bool)
        ts = np.asarray(self.frame_timestamps, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise InputError(f"positions must be (T, P, 3), got {pos.shape}")
        if vis.shape != pos.shape[:2]:
            raise InputError("visibility shape does not match positions")
        if ts.shape != (pos.shape[0],):
            raise InputError("timestamps do not match frame count")
        if pos.shape[0] < 2:
            raise InputError("need at least 2 frames")
        if pos.shape[1] < 3:
            raise InputError("need at least 3 tracked points")
        if np.any(np.diff(ts) <= 0):
            raise InputError("timestamps must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "frame_timestamps", ts)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class DetectionBox:
    bbox: tuple  # (x_min, y_min, x_max, y_max) pixels
    confidence: float
    frame_index: int

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise InputError(f"malformed detection box {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class SegmentationMask:
    mask: np.ndarray  # (H, W) bool
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise InputError("mask must be 2-D")
        object.__setattr__(self, "mask", m)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def bounding_rect(self) -> tuple | None:
        """Tight pixel-cell rectangle (x_min, y_min, x_max, y_max), or None
        for an empty mask."""
        rows, cols = np.nonzero(self.mask)
        if len(rows) == 0:
            return None
        return (float(cols.min()), float(rows.min()),
                float(cols.max() + 1), float(rows.max() + 1))


@dataclass(frozen=True)
class OrientedBox3D:
    center: np.ndarray  # (3,)
    axes: np.ndarray  # (3, 3), rows are unit box axes, det +1
    extents: np.ndarray  # (3,) full side lengths

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=np.float64))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=np.float64))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))


@dataclass(frozen=True)
class ObjectTrajectory:
    """Time-indexed 6DoF poses in start-frame camera coordinates.

    ``poses`` is (N, 6): columns are x, y, z, then the rotation vector.
    The first pose always carries a zero rotation.
    """

    poses: np.ndarray
    bbox0: OrientedBox3D | None = None
    action: str = ""
    object_name: str = ""

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=np.float64)
        if poses.ndim != 2 or poses.shape[1] != 6:
            raise InputError(f"poses must be (N, 6), got {poses.shape}")
        if poses.shape[0] < 2:
            raise InputError("trajectory needs at least 2 poses")
        if not np.all(np.isfinite(poses)):
            raise InputError("trajectory contains non-finite values")
        if np.any(poses[0, 3:] != 0.0):
            raise InputError("initial rotation must be identity (zero vector)")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :3]

    @property
    def rotations(self) -> np.ndarray:
        return self.poses[:, 3:]


@dataclass(frozen=True)
class CurationResult:
    accepted: bool
    reason: str | None = None
    detail: str = ""


def rect_iou(a: tuple, b: tuple) -> float:
    """Intersection over union of two (x0, y0, x1, y1) rectangles."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = ((a[2] - a[0]) * (a[3] - a[1])
             + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union if union > 0 else 0.0


def select_object_mask(
    candidates: list[SegmentationMask],
    detections: list[DetectionBox],
    min_confidence: float = 0.3,
) -> SegmentationMask:
    """Pick the candidate whose tight bounding rectangle best matches the
    highest-confidence detection box.

    Raises CurationReject("low-confidence") when no detection reaches the
    confidence floor; the clip is then dropped, not an input error.
    """
    if not candidates:
        raise InputError("no mask candidates")
    if not detections:
        raise CurationReject("low-confidence", "no detections for clip")
    best_det = max(detections, key=lambda d: d.confidence)
    if best_det.confidence < min_confidence:
        raise CurationReject(
            "low-confidence",
            f"best detection confidence {best_det.confidence:.3f} < {min_confidence}",
        )
    scores = []
    for cand in candidates:
        rect = cand.bounding_rect()
        scores.append(0.0 if rect is None else rect_iou(rect, best_det.bbox))
    return candidates[int(np.argmax(scores))]


def project_tracks(tracks: TrackSet, extrinsics: list[RigidTransform]) -> TrackSet:
    """Map per-frame track coordinates into frame-0 coordinates.

    ``extrinsics[k]`` must map frame-k camera coordinates to frame-0 camera
    coordinates; visibility passes through untouched.
    """
    if len(extrinsics) != tracks.num_frames:
        raise InputError(
            f"{len(extrinsics)} extrinsics for {tracks.num_frames} frames"
        )
    projected = np.stack(
        [ext.apply(tracks.positions[k]) for k, ext in enumerate(extrinsics)]
    )
    return TrackSet(projected, tracks.visibility.copy(), tracks.frame_timestamps)


def extract_rotation(
    cloud0: np.ndarray, cloud_t: np.ndarray, visibility: np.ndarray
) -> np.ndarray:
    """Rotation vector taking the frame-0 point set onto the frame-t one.

    Both sets are restricted to mutually visible points and centered, then
    H = sum (p0 - c0)(pt - ct)^T is decomposed as U S V^T and R = V U^T,
    with the last column of V negated when det(R) < 0 so the result is a
    proper rotation.
    """
    cloud0 = np.asarray(cloud0, dtype=np.float64).reshape(-1, 3)
    cloud_t = np.asarray(cloud_t, dtype=np.float64).reshape(-1, 3)
    visibility = np.asarray(visibility, dtype=bool)
    p0 = cloud0[visibility]
    pt = cloud_t[visibility]
    if len(p0) < 3:
        raise DegenerateGeometryError(
            f"only {len(p0)} mutually visible points, need 3"
        )
    a = p0 - p0.mean(axis=0)
    b = pt - pt.mean(axis=0)
    h = a.T @ b
    if np.linalg.matrix_rank(h, tol=1e-12) < 2:
        raise DegenerateGeometryError("point configuration is rank-deficient")
    u, _, vt = np.linalg.svd(h)
    rot = vt.T @ u.T
    if np.linalg.det(rot) < 0:
        vt[-1] *= -1.0
        rot = vt.T @ u.T
    return matrix_to_rotvec(rot)


def extract_position(cloud_t: np.ndarray, visibility: np.ndarray) -> np.ndarray:
    """Centroid of the visible points."""
    cloud_t = np.asarray(cloud_t, dtype=np.float64).reshape(-1, 3)
    visibility = np.asarray(visibility, dtype=bool)
    visible = cloud_t[visibility]
    if len(visible) == 0:
        raise DegenerateGeometryError("no visible points")
    return visible.mean(axis=0)


def _min_area_rect_2d(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Rotating calipers: minimum-area rectangle of 2-D points.

    Returns (area, 2x2 rotation whose rows are the rectangle axes).
    """
    try:
        hull = points[ConvexHull(points).vertices]
    except QhullError:
        hull = points
    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    edges = edges[lengths > 1e-12]
    best_area, best_rot = np.inf, np.eye(2)
    if len(edges) == 0:
        return 0.0, best_rot
    for ex, ey in edges / np.linalg.norm(edges, axis=1, keepdims=True):
        rot = np.array([[ex, ey], [-ey, ex]])
        proj = hull @ rot.T
        span = proj.max(axis=0) - proj.min(axis=0)
        area = span[0] * span[1]
        if area < best_area:
            best_area, best_rot = area, rot
    return best_area, best_rot


def _pca_axes(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    axes = vecs.T[::-1]  # rows, largest variance first
    if np.linalg.det(axes) < 0:
        axes[2] *= -1.0
    return axes


def min_bounding_box(points: np.ndarray) -> OrientedBox3D:
    """Near-minimum-volume oriented bounding box.

    Tries every convex-hull face as a flush box face (2-D rotating calipers
    in that plane) and keeps the smallest volume; falls back to PCA axes for
    degenerate (flat or tiny) point sets. Extents are floored at 1 mm.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 1:
        raise InputError("cannot bound an empty point set")
    candidates = [_pca_axes(points)] if len(points) >= 3 else [np.eye(3)]
    if len(points) >= 4:
        try:
            hull = ConvexHull(points)
            normals = hull.equations[:, :3]
            # deduplicate face normals to keep the candidate list short
            rounded = np.unique(np.round(normals, 6), axis=0)
            for n in rounded:
                n = n / np.linalg.norm(n)
                seed = np.array([1.0, 0.0, 0.0])
                if abs(n @ seed) > 0.9:
                    seed = np.array([0.0, 1.0, 0.0])
                u = np.cross(n, seed)
                u /= np.linalg.norm(u)
                v = np.cross(n, u)
                plane = points @ np.column_stack([u, v])
                _, rot2 = _min_area_rect_2d(plane)
                a0 = rot2[0, 0] * u + rot2[0, 1] * v
                a1 = rot2[1, 0] * u + rot2[1, 1] * v
                axes = np.vstack([a0, a1, n])
                if np.linalg.det(axes) < 0:
                    axes[2] *= -1.0
                candidates.append(axes)
        except QhullError:
            pass  # flat or collinear: PCA candidate handles it
    best = None
    for axes in candidates:
        proj = points @ axes.T
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        extents = np.maximum(hi - lo, MIN_BOX_EXTENT)
        volume = float(np.prod(extents))
        if best is None or volume < best[0]:
            best = (volume, axes, lo, hi, extents)
    _, axes, lo, hi, extents = best
    center = axes.T @ ((lo + hi) / 2.0)
    return OrientedBox3D(center=center, axes=axes, extents=extents)


def _continuous_rotvec(r: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Pick the rotation-vector branch closer to the previous frame's vector
    so sequences stay continuous across the angle-pi wraparound."""
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return r
    alt = r * (1.0 - 2.0 * np.pi / angle)
    if np.linalg.norm(alt - prev) < np.linalg.norm(r - prev):
        return alt
    return r


def assemble_trajectory(
    projected: TrackSet, action: str = "", object_name: str = ""
) -> ObjectTrajectory:
    """Concatenate per-frame centroid positions and frame-0-relative
    rotations into the 6DoF trajectory, with the t0 bounding box.

    Positions use the points visible at each frame; rotations use the points
    visible at both frame 0 and frame k. Rotation vectors are branch-matched
    to the previous frame for temporal continuity.
    """
    t = projected.num_frames
    cloud0 = projected.positions[0]
    vis0 = projected.visibility[0]
    poses = np.zeros((t, 6))
    try:
        poses[0, :3] = extract_position(cloud0, vis0)
    except DegenerateGeometryError as err:
        err.frame_index = 0
        raise
    prev = np.zeros(3)
    for k in range(1, t):
        vis_k = projected.visibility[k]
        try:
            poses[k, :3] = extract_position(projected.positions[k], vis_k)
            rot = extract_rotation(cloud0, projected.positions[k], vis0 & vis_k)
        except DegenerateGeometryError as err:
            err.frame_index = k
            raise
        rot = _continuous_rotvec(rot, prev)
        poses[k, 3:] = rot
        prev = rot
    bbox0 = min_bounding_box(cloud0[vis0])
    return ObjectTrajectory(
        poses=poses, bbox0=bbox0, action=action, object_name=object_name
    )


def curate(traj, intrinsics: CameraIntrinsics) -> CurationResult:
    """Accept a trajectory only if every pose centroid stays inside the
    image frustum; non-finite poses are rejected as degenerate.

    Accepts an ObjectTrajectory or a bare (N, 6) pose array.
    """
    poses = np.asarray(getattr(traj, "poses", traj), dtype=np.float64)
    if not np.all(np.isfinite(poses)):
        return CurationResult(False, "degenerate-geometry", "non-finite pose values")
    positions = poses[:, :3]
    z = positions[:, 2]
    if np.any(z <= 0):
        k = int(np.argmax(z <= 0))
        return CurationResult(
            False, "out-of-frame", f"centroid behind camera at frame {k}"
        )
    uv = perspective_project(positions, intrinsics)
    inside = (
        (uv[:, 0] >= 0)
        & (uv[:, 0] < intrinsics.width)
        & (uv[:, 1] >= 0)
        & (uv[:, 1] < intrinsics.height)
    )
    if not np.all(inside):
        k = int(np.argmax(~inside))
        return CurationResult(
            False,
            "out-of-frame",
            f"centroid projects to {tuple(np.round(uv[k], 1))} at frame {k}",
        )
    return CurationResult(True)


# re-exported so pipeline code has one import site for curation fields
REJECT_REASONS = CurationReject.REASONS
