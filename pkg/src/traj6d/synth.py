"""Deterministic synthetic clip generator: the ground-truth oracle.

Builds a textured room, animates an object and the camera with scripted
motion primitives, renders RGB-D frames by point-splat z-buffering, and
emits tracks, a frame-0 mask, detections, exact extrinsics and the exact
object trajectory. The camera starts at the world origin looking down +z,
so frame-0 camera coordinates coincide with world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .extraction import (
    DetectionBox,
    ObjectTrajectory,
    SegmentationMask,
    TrackSet,
    min_bounding_box,
)
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    PointCloud,
    RigidTransform,
    matrix_to_rotvec,
    perspective_project,
    rotvec_to_matrix,
)
from .registration import RgbdFrame

DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=190.0, fy=190.0, cx=112.0, cy=84.0, width=224, height=168
)
BACKGROUND_POINTS = 50_000


@dataclass(frozen=True)
class MotionPrimitive:
    """One timed motion segment. Kinds:

    hold                 no motion
    translate(delta)     linear offset over the segment
    rotate(axis, angle)  spin about the entity's own center
    orbit(axis, angle, pivot)  rotate entity pose about a fixed world point
    stir(axis, radius, revolutions)  circular translation, orientation fixed
    """

    kind: str
    duration: float
    delta: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)
    angle: float = 0.0
    pivot: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    revolutions: float = 1.0

    KINDS = ("hold", "translate", "rotate", "orbit", "stir")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InputError(f"unknown motion primitive {self.kind!r}")
        if self.duration <= 0:
            raise InputError("primitive duration must be positive")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "duration": self.duration}
        if self.kind == "translate":
            d["delta"] = list(self.delta)
        elif self.kind == "rotate":
            d.update(axis=list(self.axis), angle=self.angle)
        elif self.kind == "orbit":
            d.update(axis=list(self.axis), angle=self.angle, pivot=list(self.pivot))
        elif self.kind == "stir":
            d.update(axis=list(self.axis), radius=self.radius,
                     revolutions=self.revolutions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MotionPrimitive":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise InputError(f"unknown primitive keys {sorted(bad)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str = "box"  # box | sphere-shell | composite
    size: float = 0.12  # meters (cube edge / sphere diameter)
    count: int = 200  # tracked surface points
    center: tuple = (0.0, 0.0, 1.5)

    SHAPES = ("box", "sphere-shell", "composite")

    def __post_init__(self):
        if self.shape not in self.SHAPES:
            raise InputError(f"unknown object shape {self.shape!r}")
        if self.size <= 0 or self.count < 3:
            raise InputError("object needs positive size and >= 3 points")


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.0  # meters, per rendered depth pixel
    track_sigma: float = 0.0  # meters, per track coordinate


@dataclass(frozen=True)
class SceneScript:
    seed: int = 0
    obj: ObjectSpec = field(default_factory=ObjectSpec)
    object_motion: tuple = ()
    camera_motion: tuple = ()
    duration: float = 1.0
    fps: float = 5.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    detection_confidence: float = 1.0
    rigid: bool = True
    clip_id: str = ""
    action: str = "scripted motion"
    object_name: str = ""

    def __post_init__(self):
        if self.fps <= 0 or self.duration <= 0:
            raise InputError("fps and duration must be positive")
        if self.duration * self.fps < 1:
            raise InputError("script too short for two frames")
        for name, prims in (("object", self.object_motion),
                            ("camera", self.camera_motion)):
            prims = tuple(prims)
            if prims:
                total = sum(p.duration for p in prims)
                if abs(total - self.duration) > 1e-9:
                    raise InputError(
                        f"{name} primitives span {total} s, expected "
                        f"{self.duration} s"
                    )
        object.__setattr__(self, "object_motion", tuple(self.object_motion))
        object.__setattr__(self, "camera_motion", tuple(self.camera_motion))
        if not self.clip_id:
            object.__setattr__(self, "clip_id", f"synth-{self.seed:06d}")
        if not self.object_name:
            object.__setattr__(self, "object_name", self.obj.shape)

    @property
    def num_frames(self) -> int:
        return int(round(self.duration * self.fps)) + 1

    def frame_times(self) -> np.ndarray:
        return np.arange(self.num_frames) / self.fps

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "object": {
                "shape": self.obj.shape,
                "size": self.obj.size,
                "count": self.obj.count,
                "center": list(self.obj.center),
            },
            "object_motion": [p.to_dict() for p in self.object_motion],
            "camera_motion": [p.to_dict() for p in self.camera_motion],
            "duration": self.duration,
            "fps": self.fps,
            "noise": {
                "depth_sigma": self.noise.depth_sigma,
                "track_sigma": self.noise.track_sigma,
            },
            "detection_confidence": self.detection_confidence,
            "rigid": self.rigid,
            "clip_id": self.clip_id,
            "action": self.action,
            "object_name": self.object_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        d = dict(d)
        obj = d.pop("object", {})
        obj = ObjectSpec(
            shape=obj.get("shape", "box"),
            size=obj.get("size", 0.12),
            count=obj.get("count", 200),
            center=tuple(obj.get("center", (0.0, 0.0, 1.5))),
        )
        noise = d.pop("noise", {})
        noise = NoiseSpec(
            depth_sigma=noise.get("depth_sigma", 0.0),
            track_sigma=noise.get("track_sigma", 0.0),
        )
        motions = {
            key: tuple(MotionPrimitive.from_dict(p) for p in d.pop(key, []))
            for key in ("object_motion", "camera_motion")
        }
        known = set(cls.__dataclass_fields__) - {"obj", "noise"}
        bad = set(d) - known
        if bad:
            raise InputError(f"unknown script keys {sorted(bad)}")
        return cls(obj=obj, noise=noise, **motions, **d)

    @classmethod
    def load(cls, path) -> "SceneScript":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise InputError(f"{path}: invalid JSON at line {err.lineno}") from err
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass
class SynthClip:
    frames: list  # of RgbdFrame
    tracks: TrackSet
    mask: SegmentationMask
    detections: list  # of DetectionBox
    gt_trajectory: ObjectTrajectory
    gt_extrinsics: list  # of RigidTransform, frame-k -> frame-0
    intrinsics: CameraIntrinsics
    script: SceneScript


def _rotation_about(pivot: np.ndarray, axis: np.ndarray, angle: float) -> RigidTransform:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise InputError("rotation axis is zero")
    rot = rotvec_to_matrix(axis / n * angle)
    pivot = np.asarray(pivot, dtype=np.float64)
    return RigidTransform(rot, pivot - rot @ pivot)


def _plane_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    seed = np.array([1.0, 0.0, 0.0])
    if abs(axis @ seed) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, seed)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


class _MotionTrack:
    """Evaluates accumulated scripted motion M(t): point at time t is
    M(t)(point at time 0), in world coordinates."""

    def __init__(self, primitives, duration: float, base_center):
        if not primitives:
            primitives = (MotionPrimitive("hold", duration),)
        self.primitives = tuple(primitives)
        self.base_center = np.asarray(base_center, dtype=np.float64)
        self.starts = []
        self.accumulated = []  # motion at each primitive's start
        acc = RigidTransform.identity()
        t0 = 0.0
        for prim in self.primitives:
            self.starts.append(t0)
            self.accumulated.append(acc)
            acc = self._segment(prim, 1.0, acc).compose(acc)
            t0 += prim.duration
        self.total = t0

    def _segment(self, prim: MotionPrimitive, s: float,
                 at_start: RigidTransform) -> RigidTransform:
        """Incremental transform of ``prim`` at fraction s, given the motion
        accumulated when the primitive starts (for self-centered rotation)."""
        if prim.kind == "hold":
            return RigidTransform.identity()
        if prim.kind == "translate":
            return RigidTransform(np.eye(3), np.asarray(prim.delta) * s)
        if prim.kind == "rotate":
            pivot = at_start.apply(self.base_center)
            return _rotation_about(pivot, prim.axis, prim.angle * s)
        if prim.kind == "orbit":
            return _rotation_about(np.asarray(prim.pivot), prim.axis, prim.angle * s)
        # stir: circular offset starting at zero
        u, v = _plane_basis(prim.axis)
        phase = 2.0 * np.pi * prim.revolutions * s
        offset = prim.radius * ((np.cos(phase) - 1.0) * u + np.sin(phase) * v)
        return RigidTransform(np.eye(3), offset)

    def at(self, t: float) -> RigidTransform:
        t = min(max(t, 0.0), self.total)
        idx = len(self.primitives) - 1
        for k in range(len(self.primitives)):
            end = self.starts[k] + self.primitives[k].duration
            if t <= end + 1e-12:
                idx = k
                break
        prim = self.primitives[idx]
        s = (t - self.starts[idx]) / prim.duration
        s = min(max(s, 0.0), 1.0)
        base = self.accumulated[idx]
        return self._segment(prim, s, base).compose(base)


def _box_surface(rng, center, extents, n) -> np.ndarray:
    ex, ey, ez = np.asarray(extents, dtype=np.float64) / 2.0
    areas = np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, n)
    v = rng.uniform(-1.0, 1.0, n)
    half = (ex, ey, ez)
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = half[axis] if f % 2 == 0 else -half[axis]
        pts[m, others[0]] = u[m] * half[others[0]]
        pts[m, others[1]] = v[m] * half[others[1]]
    return pts + np.asarray(center, dtype=np.float64)


def _gradient_colors(points: np.ndarray, freq, phase, rng, speckle=0.05) -> np.ndarray:
    base = 0.5 + 0.35 * np.sin(points * np.asarray(freq) + np.asarray(phase))
    return np.clip(base + rng.normal(0.0, speckle, points.shape), 0.0, 1.0)


def _room_background(rng, n_points: int) -> PointCloud:
    """Room interior around the camera plus clutter boxes; colored with
    smooth gradients and seeded speckle so photometric terms bite."""
    n_wall = int(n_points * 0.7) // 5
    walls = []
    spans = [
        # back wall z = 4
        lambda u, v: np.column_stack([u * 2.0, v * 1.5, np.full(len(u), 4.0)]),
        # left / right walls x = -/+ 2
        lambda u, v: np.column_stack([np.full(len(u), -2.0), v * 1.5, 2.0 + 2.0 * u]),
        lambda u, v: np.column_stack([np.full(len(u), 2.0), v * 1.5, 2.0 + 2.0 * u]),
        # floor / ceiling y = +/- 1.5
        lambda u, v: np.column_stack([u * 2.0, np.full(len(u), 1.5), 2.0 + 2.0 * v]),
        lambda u, v: np.column_stack([u * 2.0, np.full(len(u), -1.5), 2.0 + 2.0 * v]),
    ]
    for make in spans:
        u = rng.uniform(-1.0, 1.0, n_wall)
        v = rng.uniform(-1.0, 1.0, n_wall)
        walls.append(make(u, v))
    pts = [np.concatenate(walls)]
    n_clutter = n_points - 5 * n_wall
    n_box = max(n_clutter // 8, 1)
    for _ in range(8):
        center = rng.uniform([-1.4, -1.0, 1.2], [1.4, 1.2, 3.4])
        extents = rng.uniform(0.15, 0.5, 3)
        box = _box_surface(rng, center, extents, n_box)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rot = rotvec_to_matrix(axis * rng.uniform(0, np.pi))
        pts.append((box - center) @ rot.T + center)
    pts = np.concatenate(pts)
    colors = _gradient_colors(pts, (2.9, 2.1, 1.3), (0.0, 2.1, 4.2), rng)
    return PointCloud(pts, colors=colors)


def _object_points(rng, spec: ObjectSpec) -> PointCloud:
    center = np.asarray(spec.center, dtype=np.float64)
    if spec.shape == "box":
        pts = _box_surface(rng, center, (spec.size,) * 3, spec.count)
    elif spec.shape == "sphere-shell":
        dirs = rng.normal(size=(spec.count, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = center + dirs * (spec.size / 2.0)
    else:  # composite: box plus sphere cap, deliberately asymmetric
        n_box = spec.count // 2
        pts_box = _box_surface(rng, center, (spec.size,) * 3, n_box)
        dirs = rng.normal(size=(spec.count - n_box, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts_sph = center + np.array([spec.size, 0, 0]) + dirs * (spec.size / 3.0)
        pts = np.concatenate([pts_box, pts_sph])
    colors = _gradient_colors(pts, (9.0, 7.0, 8.0), (1.0, 3.0, 5.0), rng, 0.03)
    return PointCloud(pts, colors=colors)


def _splat(points_cam, colors, intrinsics: CameraIntrinsics):
    """Nearest-depth-wins point splatting; returns (color image, depth map,
    winner point indices per pixel (-1 where empty))."""
    h, w = intrinsics.height, intrinsics.width
    depth = np.zeros((h, w))
    image = np.zeros((h, w, 3))
    winner = np.full((h, w), -1, dtype=np.int64)
    z = points_cam[:, 2]
    front = z > 1e-6
    uv = perspective_project(points_cam[front], intrinsics)
    ix = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    iy = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    orig = np.nonzero(front)[0][inside]
    ix, iy = ix[inside], iy[inside]
    lin = iy * w + ix
    zf = z[orig]
    order = np.lexsort((zf, lin))
    lin_sorted = lin[order]
    first = np.unique(lin_sorted, return_index=True)[1]
    win = orig[order[first]]
    pix = lin_sorted[first]
    depth.reshape(-1)[pix] = z[win]
    image.reshape(-1, 3)[pix] = colors[win]
    winner.reshape(-1)[pix] = win
    return image, depth, winner


def generate(script: SceneScript,
             intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> SynthClip:
    """Render the scripted scene into a fully self-consistent clip.

    Bit-deterministic for a fixed seed; raises InputError when the object is
    not visible in frame 0.
    """
    rng = np.random.default_rng(script.seed)
    background = _room_background(rng, BACKGROUND_POINTS)
    obj = _object_points(rng, script.obj)
    obj_center0 = obj.points.mean(axis=0)

    object_motion = _MotionTrack(script.object_motion, script.duration, obj_center0)
    camera_motion = _MotionTrack(script.camera_motion, script.duration,
                                 np.zeros(3))
    times = script.frame_times()

    frames = []
    track_positions = np.empty((len(times), len(obj), 3))
    track_visibility = np.empty((len(times), len(obj)), dtype=bool)
    gt_extrinsics = []
    gt_positions = np.empty((len(times), 3))
    gt_rotations = []
    mask = None
    n_bg = len(background)

    for k, t in enumerate(times):
        obj_motion_t = object_motion.at(t)
        cam_pose = camera_motion.at(t)  # camera-to-world (identity at t=0)
        world_to_cam = cam_pose.inverse()

        obj_world = obj_motion_t.apply(obj.points)
        all_world = np.concatenate([background.points, obj_world])
        all_colors = np.concatenate([background.colors, obj.colors])
        cam_points = world_to_cam.apply(all_world)
        image, depth, winner = _splat(cam_points, all_colors, intrinsics)
        if script.noise.depth_sigma > 0:
            valid = depth > 0
            depth = depth + np.where(
                valid, rng.normal(0.0, script.noise.depth_sigma, depth.shape), 0.0
            )
            depth[valid] = np.maximum(depth[valid], 1e-4)
        frames.append(RgbdFrame(color=image, depth=DepthImage(depth)))

        obj_cam = cam_points[n_bg:]
        if k == 0:
            exact_obj_cam0 = obj_cam.copy()
        if script.noise.track_sigma > 0:
            obj_cam = obj_cam + rng.normal(0.0, script.noise.track_sigma,
                                           obj_cam.shape)
        track_positions[k] = obj_cam
        track_visibility[k] = obj_cam[:, 2] > 1e-6

        gt_extrinsics.append(cam_pose)  # frame-k -> frame-0 == world coords
        gt_positions[k] = obj_world.mean(axis=0)
        gt_rotations.append(obj_motion_t.rotation)

        if k == 0:
            obj_mask = winner >= n_bg
            if not obj_mask.any():
                raise InputError("object not visible in frame 0")
            mask = SegmentationMask(obj_mask, label=script.object_name)

    rect = mask.bounding_rect()
    detections = [
        DetectionBox(bbox=rect, confidence=script.detection_confidence,
                     frame_index=0)
    ]

    poses = np.zeros((len(times), 6))
    poses[:, :3] = gt_positions
    prev = np.zeros(3)
    for k in range(1, len(times)):
        r = matrix_to_rotvec(gt_rotations[k])
        angle = np.linalg.norm(r)
        if angle > 1e-12:
            alt = r * (1.0 - 2.0 * np.pi / angle)
            if np.linalg.norm(alt - prev) < np.linalg.norm(r - prev):
                r = alt
        poses[k, 3:] = r
        prev = r
    gt_trajectory = ObjectTrajectory(
        poses=poses,
        bbox0=min_bounding_box(exact_obj_cam0[track_visibility[0]]),
        action=script.action,
        object_name=script.object_name,
    )

    tracks = TrackSet(track_positions, track_visibility, times)
    return SynthClip(
        frames=frames,
        tracks=tracks,
        mask=mask,
        detections=detections,
        gt_trajectory=gt_trajectory,
        gt_extrinsics=gt_extrinsics,
        intrinsics=intrinsics,
        script=script,
    )


def end_to_end_check(script: SceneScript, config=None,
                     intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS):
    """Generate a clip, run the full extraction pipeline on it and evaluate
    the extracted trajectory against the scripted ground truth."""
    from .config import PipelineConfig
    from .metrics import TrajectoryPair, evaluate_batch
    from .pipeline import bundle_from_synth, extract_clip

    if config is None:
        config = PipelineConfig()
    clip = generate(script, intrinsics)
    record = extract_clip(bundle_from_synth(clip), config)
    pair = TrajectoryPair(
        predicted=record.poses,
        reference=clip.gt_trajectory.poses,
        intrinsics=intrinsics,
    )
    return evaluate_batch([pair], instance_ids=[script.clip_id])
