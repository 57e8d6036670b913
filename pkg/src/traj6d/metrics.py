"""Trajectory evaluation: ADE / FDE in 3D and normalized 2D image space,
geodesic rotation distance, and variable-length normalization.

2D variants perspective-project both centroids and divide pixel coordinates
by (width, height), making the numbers resolution-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import CameraIntrinsics, perspective_project, rotvec_to_matrix

COLUMNS = ("ade3d", "fde3d", "ade2d", "fde2d", "gd")


@dataclass(frozen=True)
class TrajectoryPair:
    """One predicted trajectory against its reference, plus the intrinsics
    used by the 2D metrics (optional when only 3D/GD are wanted)."""

    predicted: np.ndarray  # (N, 6)
    reference: np.ndarray  # (M, 6)
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        pred = np.atleast_2d(np.asarray(self.predicted, dtype=np.float64))
        ref = np.atleast_2d(np.asarray(self.reference, dtype=np.float64))
        if ref.shape[0] == 0:
            raise InputError("reference trajectory is empty")
        if pred.shape[1] != 6 or ref.shape[1] != 6:
            raise InputError("trajectories must be (N, 6)")
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "reference", ref)

    def normalized(self) -> "TrajectoryPair":
        return TrajectoryPair(
            normalize_length(self.predicted, len(self.reference)),
            self.reference,
            self.intrinsics,
        )


def normalize_length(predicted: np.ndarray, reference_len: int) -> np.ndarray:
    """Cut long predictions, pad short ones by repeating the final pose."""
    predicted = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    if predicted.shape[0] == 0:
        raise InputError("cannot normalize an empty prediction")
    if reference_len < 1:
        raise InputError("reference length must be positive")
    n = predicted.shape[0]
    if n >= reference_len:
        return predicted[:reference_len].copy()
    pad = np.tile(predicted[-1], (reference_len - n, 1))
    return np.vstack([predicted, pad])


def _normalized_projection(positions: np.ndarray, intrinsics: CameraIntrinsics):
    if intrinsics is None:
        raise InputError("2D metrics need camera intrinsics")
    if np.any(positions[:, 2] <= 0):
        raise InputError("cannot project: point at or behind the camera (z <= 0)")
    uv = perspective_project(positions, intrinsics)
    return uv / np.array([intrinsics.width, intrinsics.height], dtype=np.float64)


def _position_errors(pair: TrajectoryPair, space: str) -> np.ndarray:
    if pair.predicted.shape[0] != pair.reference.shape[0]:
        raise InputError("trajectory lengths differ; normalize first")
    if space == "3d":
        diff = pair.predicted[:, :3] - pair.reference[:, :3]
    elif space == "2d":
        diff = _normalized_projection(
            pair.predicted[:, :3], pair.intrinsics
        ) - _normalized_projection(pair.reference[:, :3], pair.intrinsics)
    else:
        raise InputError(f"unknown metric space {space!r}")
    return np.linalg.norm(diff, axis=1)


def ade(pair: TrajectoryPair, space: str = "3d") -> float:
    """Mean per-timestep L2 position error (meters in 3D, normalized image
    units in 2D)."""
    return float(np.mean(_position_errors(pair, space)))


def fde(pair: TrajectoryPair, space: str = "3d") -> float:
    """L2 position error at the final timestep."""
    return float(_position_errors(pair, space)[-1])


def geodesic_distance(r_pred: np.ndarray, r_ref: np.ndarray) -> float:
    """Angular difference arccos((tr(R_ref^T R_pred) - 1) / 2), with the
    trace argument clamped to [-1, 1] so imperfect rotations never NaN."""
    rot_pred = rotvec_to_matrix(np.asarray(r_pred, dtype=np.float64))
    rot_ref = rotvec_to_matrix(np.asarray(r_ref, dtype=np.float64))
    arg = (np.trace(rot_ref.T @ rot_pred) - 1.0) / 2.0
    return float(np.arccos(np.clip(arg, -1.0, 1.0)))


def trajectory_gd(pair: TrajectoryPair) -> float:
    """Trajectory-level GD: mean of per-timestep geodesic distances."""
    if pair.predicted.shape[0] != pair.reference.shape[0]:
        raise InputError("trajectory lengths differ; normalize first")
    return float(
        np.mean(
            [
                geodesic_distance(p, r)
                for p, r in zip(pair.predicted[:, 3:], pair.reference[:, 3:])
            ]
        )
    )


@dataclass(frozen=True)
class MetricRow:
    instance_id: str
    ade3d: float
    fde3d: float
    ade2d: float | None
    fde2d: float | None
    gd: float

    def as_tuple(self):
        return (self.ade3d, self.fde3d, self.ade2d, self.fde2d, self.gd)


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple
    means: dict

    def to_dict(self) -> dict:
        return {
            "per_instance": [
                {"instance_id": r.instance_id,
                 **dict(zip(COLUMNS, r.as_tuple()))}
                for r in self.rows
            ],
            "mean": dict(self.means),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text(self) -> str:
        header = ["instance", "ADE3D", "FDE3D", "ADE2D", "FDE2D", "GD"]
        lines = []
        for r in self.rows:
            lines.append([r.instance_id] + [_fmt(v) for v in r.as_tuple()])
        lines.append(["mean"] + [_fmt(self.means[c]) for c in COLUMNS])
        widths = [
            max(len(row[i]) for row in [header] + lines)
            for i in range(len(header))
        ]
        out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for row in lines:
            out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        return "\n".join(out)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _evaluate_pair(pair: TrajectoryPair, instance_id: str) -> MetricRow:
    pair = pair.normalized()
    try:
        a2, f2 = ade(pair, "2d"), fde(pair, "2d")
    except InputError:
        a2 = f2 = None
    return MetricRow(
        instance_id=instance_id,
        ade3d=ade(pair, "3d"),
        fde3d=fde(pair, "3d"),
        ade2d=a2,
        fde2d=f2,
        gd=trajectory_gd(pair),
    )


def evaluate_batch(pairs, instance_ids=None) -> EvaluationReport:
    """Per-instance and mean metrics in ADE3D/FDE3D/ADE2D/FDE2D/GD order.

    Pairs sharing an instance id form a best-of group: the sample with the
    lowest ADE(3D) represents the instance. With no ids, every pair is its
    own instance.
    """
    pairs = list(pairs)
    if not pairs:
        raise InputError("nothing to evaluate")
    if instance_ids is None:
        instance_ids = [str(k) for k in range(len(pairs))]
    if len(instance_ids) != len(pairs):
        raise InputError("instance_ids not parallel to pairs")
    groups: dict = {}
    order = []
    for pid, pair in zip(instance_ids, pairs):
        if pid not in groups:
            groups[pid] = []
            order.append(pid)
        groups[pid].append(pair)
    rows = []
    for pid in order:
        candidates = [_evaluate_pair(p, pid) for p in groups[pid]]
        rows.append(min(candidates, key=lambda r: r.ade3d))
    means = {}
    for col in COLUMNS:
        values = [getattr(r, col) for r in rows if getattr(r, col) is not None]
        means[col] = float(np.mean(values)) if values else None
    return EvaluationReport(rows=tuple(rows), means=means)
