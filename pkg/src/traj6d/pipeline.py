"""Per-clip extraction driver: mask selection, registration, chaining,
projection, assembly and curation, producing trajectory records.

Rejects surface as CurationReject with one machine-readable reason code
(low-confidence, registration-failure, degenerate-geometry, out-of-frame,
non-rigid); batch callers turn those into log entries rather than failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import CurationReject, DegenerateGeometryError, RegistrationFailure
from .extraction import (
    DetectionBox,
    ObjectTrajectory,
    OrientedBox3D,
    SegmentationMask,
    TrackSet,
    assemble_trajectory,
    curate,
    project_tracks,
    select_object_mask,
)
from .geometry import CameraIntrinsics
from .registration import RgbdFrame, chain_extrinsics, estimate_pairwise_motion


@dataclass
class ClipBundle:
    """Everything one clip contributes to extraction, already in memory."""

    clip_id: str
    action: str
    object_name: str
    rigid: bool
    intrinsics: CameraIntrinsics
    frames: list  # of RgbdFrame
    mask_candidates: list  # of SegmentationMask
    detections: list  # of DetectionBox
    tracks: TrackSet


@dataclass
class TrajectoryRecord:
    """Serializable extraction output; one JSON-lines row per clip."""

    clip_id: str
    action_description: str
    object_name: str
    poses: np.ndarray  # (N, 6)
    bbox0: OrientedBox3D | None = None
    intrinsics: CameraIntrinsics | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "clip_id": self.clip_id,
            "action_description": self.action_description,
            "object_name": self.object_name,
            "poses": np.asarray(self.poses, dtype=np.float64).tolist(),
        }
        if self.bbox0 is not None:
            d["bbox0"] = {
                "center": self.bbox0.center.tolist(),
                "axes": self.bbox0.axes.tolist(),
                "extents": self.bbox0.extents.tolist(),
            }
        if self.intrinsics is not None:
            d["intrinsics"] = self.intrinsics.to_dict()
        d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        bbox = d.get("bbox0")
        intr = d.get("intrinsics")
        return cls(
            clip_id=d["clip_id"],
            action_description=d.get("action_description", ""),
            object_name=d.get("object_name", ""),
            poses=np.asarray(d["poses"], dtype=np.float64),
            bbox0=None if bbox is None else OrientedBox3D(
                center=np.asarray(bbox["center"]),
                axes=np.asarray(bbox["axes"]),
                extents=np.asarray(bbox["extents"]),
            ),
            intrinsics=None if intr is None else CameraIntrinsics.from_dict(intr),
            provenance=d.get("provenance", {}),
        )


def derive_pair_seed(base_seed: int, clip_index: int, pair_index: int) -> int:
    """Stable per-pair RNG seed; independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed), int(clip_index), int(pair_index)])
    return int(ss.generate_state(1)[0])


def extract_clip(
    bundle: ClipBundle,
    config: PipelineConfig = PipelineConfig(),
    clip_index: int = 0,
) -> TrajectoryRecord:
    """Run the full extraction on one clip.

    Raises CurationReject for every automated-filter outcome; registration
    and geometry failures are mapped onto their curation reason codes.
    """
    if not bundle.rigid:
        raise CurationReject("non-rigid", "manifest marks the object non-rigid")
    selected_mask = select_object_mask(
        bundle.mask_candidates, bundle.detections, config.min_detection_confidence
    )

    pair_seeds = []
    pair_fitness = []
    pair_rmse = []
    pairwise = []
    try:
        for k in range(len(bundle.frames) - 1):
            seed = derive_pair_seed(config.seed, clip_index, k)
            pair_seeds.append(seed)
            result = estimate_pairwise_motion(
                bundle.frames[k],
                bundle.frames[k + 1],
                bundle.intrinsics,
                config,
                seed=seed,
                frame_index=k,
            )
            if result.fitness < config.min_pair_fitness:
                raise RegistrationFailure(
                    f"pair {k} fitness {result.fitness:.3f} below "
                    f"{config.min_pair_fitness}",
                    frame_index=k,
                )
            if result.inlier_rmse > config.max_pair_rmse:
                raise RegistrationFailure(
                    f"pair {k} rmse {result.inlier_rmse:.4f} above "
                    f"{config.max_pair_rmse}",
                    frame_index=k,
                )
            pairwise.append(result.transform)
            pair_fitness.append(result.fitness)
            pair_rmse.append(result.inlier_rmse)
    except RegistrationFailure as err:
        raise CurationReject("registration-failure", str(err)) from err

    extrinsics = chain_extrinsics(pairwise)
    try:
        projected = project_tracks(bundle.tracks, extrinsics)
        trajectory = assemble_trajectory(
            projected, action=bundle.action, object_name=bundle.object_name
        )
    except DegenerateGeometryError as err:
        raise CurationReject("degenerate-geometry", str(err)) from err

    verdict = curate(trajectory, bundle.intrinsics)
    if not verdict.accepted:
        raise CurationReject(verdict.reason, verdict.detail)

    return TrajectoryRecord(
        clip_id=bundle.clip_id,
        action_description=bundle.action,
        object_name=bundle.object_name,
        poses=trajectory.poses,
        bbox0=trajectory.bbox0,
        intrinsics=bundle.intrinsics,
        provenance={
            "seed": int(config.seed),
            "pair_seeds": [int(s) for s in pair_seeds],
            "pair_fitness": pair_fitness,
            "pair_rmse": pair_rmse,
            "mask_label": selected_mask.label,
        },
    )


def bundle_from_synth(clip) -> ClipBundle:
    """Adapt an in-memory synthetic clip to the extraction input shape."""
    return ClipBundle(
        clip_id=clip.script.clip_id,
        action=clip.script.action,
        object_name=clip.script.object_name,
        rigid=clip.script.rigid,
        intrinsics=clip.intrinsics,
        frames=list(clip.frames),
        mask_candidates=[clip.mask],
        detections=list(clip.detections),
        tracks=clip.tracks,
    )


def trajectory_from_record(record: TrajectoryRecord) -> ObjectTrajectory:
    return ObjectTrajectory(
        poses=record.poses,
        bbox0=record.bbox0,
        action=record.action_description,
        object_name=record.object_name,
    )
