"""On-disk formats: raw depth (EGDP) and track (EGTR) blobs, PGM masks,
PPM frames, JSON manifests / detections, and JSON-lines trajectory records.

Binary layouts (all little-endian):
  EGDP  magic "EGDP", u32 width, u32 height, width*height f32 meters
  EGTR  magic "EGTR", u32 T, u32 P, T*P*3 f32 positions, T*P u8 visibility
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .extraction import DetectionBox, SegmentationMask, TrackSet
from .geometry import CameraIntrinsics, DepthImage, RigidTransform
from .pipeline import ClipBundle, TrajectoryRecord
from .registration import RgbdFrame

MAX_CLIP_SPAN = 4.0  # seconds


def _read_exact(fh, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise InputError(
            f"{path}: unexpected end of file at byte {fh.tell() - len(data)} "
            f"(wanted {n} bytes, got {len(data)})"
        )
    return data


# ------------------------------------------------------------------ depth maps


def write_depth(path, depth: DepthImage) -> None:
    values = np.ascontiguousarray(depth.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"EGDP")
        fh.write(struct.pack("<II", depth.width, depth.height))
        fh.write(values.tobytes())


def read_depth(path) -> DepthImage:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != b"EGDP":
            raise InputError(f"{path}: bad magic {magic!r} at byte 0")
        width, height = struct.unpack("<II", _read_exact(fh, 8, path))
        raw = _read_exact(fh, width * height * 4, path)
    values = np.frombuffer(raw, dtype="<f4").reshape(height, width)
    return DepthImage(values.astype(np.float64))


# --------------------------------------------------------------------- tracks


def write_tracks(path, positions: np.ndarray, visibility: np.ndarray) -> None:
    positions = np.ascontiguousarray(positions, dtype="<f4")
    visibility = np.ascontiguousarray(visibility, dtype=np.uint8)
    t, p = positions.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"EGTR")
        fh.write(struct.pack("<II", t, p))
        fh.write(positions.tobytes())
        fh.write(visibility.tobytes())


def read_track_arrays(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path)
        if magic != b"EGTR":
            raise InputError(f"{path}: bad magic {magic!r} at byte 0")
        t, p = struct.unpack("<II", _read_exact(fh, 8, path))
        pos_raw = _read_exact(fh, t * p * 3 * 4, path)
        vis_raw = _read_exact(fh, t * p, path)
    positions = np.frombuffer(pos_raw, dtype="<f4").reshape(t, p, 3)
    visibility = np.frombuffer(vis_raw, dtype=np.uint8).reshape(t, p) != 0
    return positions.astype(np.float64), visibility


# ------------------------------------------------------------------ PGM / PPM


def _read_pnm_header(fh, magic: bytes, path):
    got = _read_exact(fh, 2, path)
    if got != magic:
        raise InputError(f"{path}: bad magic {got!r} at byte 0")
    fields = []
    while len(fields) < 3:
        token = b""
        ch = fh.read(1)
        while ch.isspace():
            ch = fh.read(1)
        if ch == b"#":  # comment line
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        while ch and not ch.isspace():
            token += ch
            ch = fh.read(1)
        if not token:
            raise InputError(f"{path}: truncated header at byte {fh.tell()}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise InputError(f"{path}: unsupported maxval {maxval}")
    return width, height


def write_mask(path, mask: SegmentationMask) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode())
        fh.write((mask.mask.astype(np.uint8) * 255).tobytes())


def read_mask(path, label: str = "") -> SegmentationMask:
    with open(path, "rb") as fh:
        width, height = _read_pnm_header(fh, b"P5", path)
        raw = _read_exact(fh, width * height, path)
    values = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    return SegmentationMask(values == 255, label=label)


def write_image(path, image: np.ndarray) -> None:
    """(H, W, 3) floats in [0, 1] -> binary PPM."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        width, height = _read_pnm_header(fh, b"P6", path)
        raw = _read_exact(fh, width * height * 3, path)
    data = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return data.astype(np.float64) / 255.0


# ----------------------------------------------------------------- detections


def write_detections(path, detections) -> None:
    rows = [
        {
            "bbox": [float(v) for v in d.bbox],
            "confidence": float(d.confidence),
            "frame_index": int(d.frame_index),
        }
        for d in detections
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def read_detections(path) -> list:
    with open(path) as fh:
        try:
            rows = json.load(fh)
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: invalid JSON at line {err.lineno}") from err
    try:
        return [
            DetectionBox(
                bbox=tuple(float(v) for v in r["bbox"]),
                confidence=float(r["confidence"]),
                frame_index=int(r["frame_index"]),
            )
            for r in rows
        ]
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path}: malformed detection entry ({err})") from err


# ------------------------------------------------------------------ manifests


@dataclass(frozen=True)
class ClipPaths:
    frames: tuple  # per-frame RGB images (PPM)
    depths: tuple  # per-frame depth maps (EGDP)
    masks: tuple  # frame-0 segmentation candidates (PGM)
    detections: str
    tracks: str


@dataclass(frozen=True)
class ClipManifest:
    clip_id: str
    action_description: str
    object_name: str
    rigid: bool
    t_start: float
    t_end: float
    intrinsics: CameraIntrinsics
    paths: ClipPaths
    fps: float = 20.0
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise InputError("t_start must precede t_end")
        if self.t_end - self.t_start > MAX_CLIP_SPAN + 1e-9:
            raise InputError(
                f"clip spans {self.t_end - self.t_start:.2f} s, the convention "
                f"allows at most {MAX_CLIP_SPAN} s"
            )
        if self.fps <= 0:
            raise InputError("fps must be positive")
        if len(self.paths.frames) != len(self.paths.depths):
            raise InputError("frames and depths lists differ in length")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "action_description": self.action_description,
            "object_name": self.object_name,
            "rigid": self.rigid,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "fps": self.fps,
            "intrinsics": self.intrinsics.to_dict(),
            "paths": {
                "frames": list(self.paths.frames),
                "depths": list(self.paths.depths),
                "masks": list(self.paths.masks),
                "detections": self.paths.detections,
                "tracks": self.paths.tracks,
            },
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=Path(".")) -> "ClipManifest":
        try:
            paths = d["paths"]
            return cls(
                clip_id=str(d["clip_id"]),
                action_description=str(d.get("action_description", "")),
                object_name=str(d.get("object_name", "")),
                rigid=bool(d["rigid"]),
                t_start=float(d["t_start"]),
                t_end=float(d["t_end"]),
                fps=float(d.get("fps", 20.0)),
                intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
                paths=ClipPaths(
                    frames=tuple(paths["frames"]),
                    depths=tuple(paths["depths"]),
                    masks=tuple(paths["masks"]),
                    detections=paths["detections"],
                    tracks=paths["tracks"],
                ),
                base_dir=Path(base_dir),
            )
        except (KeyError, TypeError) as err:
            raise InputError(f"manifest missing field: {err}") from err

    @classmethod
    def load(cls, path) -> "ClipManifest":
        path = Path(path)
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise InputError(f"{path}: invalid JSON at line {err.lineno}") from err
        return cls.from_dict(data, base_dir=path.parent)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_clip(manifest: ClipManifest) -> ClipBundle:
    """Load and cross-validate every file the manifest references."""
    base = manifest.base_dir
    intr = manifest.intrinsics
    frames = []
    for frame_path, depth_path in zip(manifest.paths.frames, manifest.paths.depths):
        color = read_image(base / frame_path)
        depth = read_depth(base / depth_path)
        if color.shape[:2] != (intr.height, intr.width):
            raise InputError(
                f"{frame_path}: image is {color.shape[1]}x{color.shape[0]}, "
                f"intrinsics say {intr.width}x{intr.height}"
            )
        if (depth.height, depth.width) != (intr.height, intr.width):
            raise InputError(
                f"{depth_path}: depth is {depth.width}x{depth.height}, "
                f"intrinsics say {intr.width}x{intr.height}"
            )
        frames.append(RgbdFrame(color=color, depth=depth))
    if len(frames) < 2:
        raise InputError(f"clip {manifest.clip_id}: needs at least 2 frames")

    masks = [
        read_mask(base / p, label=manifest.object_name) for p in manifest.paths.masks
    ]
    for p, m in zip(manifest.paths.masks, masks):
        if (m.height, m.width) != (intr.height, intr.width):
            raise InputError(f"{p}: mask dimensions do not match intrinsics")
    if not masks:
        raise InputError(f"clip {manifest.clip_id}: no mask candidates listed")

    detections = read_detections(base / manifest.paths.detections)
    positions, visibility = read_track_arrays(base / manifest.paths.tracks)
    if positions.shape[0] != len(frames):
        raise InputError(
            f"{manifest.paths.tracks}: {positions.shape[0]} track frames for "
            f"{len(frames)} image frames"
        )
    timestamps = manifest.t_start + np.arange(len(frames)) / manifest.fps
    tracks = TrackSet(positions, visibility, timestamps)
    return ClipBundle(
        clip_id=manifest.clip_id,
        action=manifest.action_description,
        object_name=manifest.object_name,
        rigid=manifest.rigid,
        intrinsics=intr,
        frames=frames,
        mask_candidates=masks,
        detections=detections,
        tracks=tracks,
    )


# -------------------------------------------------------------------- records


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for record in records:
            d = record.to_dict() if isinstance(record, TrajectoryRecord) else record
            fh.write(json.dumps(d))
            fh.write("\n")


def read_records(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(TrajectoryRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as err:
                raise InputError(f"{path}:{lineno}: bad record ({err})") from err
    return records


def write_token_rows(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row))
            fh.write("\n")


def read_token_rows(path) -> list:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise InputError(f"{path}:{lineno}: invalid JSON ({err})") from err
    return rows


# ---------------------------------------------------------------- synth clips


def write_extrinsics(path, extrinsics) -> None:
    rows = [
        {"rotation": e.rotation.tolist(), "translation": e.translation.tolist()}
        for e in extrinsics
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def read_extrinsics(path) -> list:
    with open(path) as fh:
        rows = json.load(fh)
    return [
        RigidTransform(np.asarray(r["rotation"]), np.asarray(r["translation"]))
        for r in rows
    ]


def write_synth_clip(clip, outdir) -> Path:
    """Write a synthetic clip in exactly the ingestion formats, plus ground
    truth sidecar files; returns the manifest path."""
    outdir = Path(outdir)
    (outdir / "frames").mkdir(parents=True, exist_ok=True)
    (outdir / "depths").mkdir(exist_ok=True)
    (outdir / "masks").mkdir(exist_ok=True)

    frame_paths, depth_paths = [], []
    for k, frame in enumerate(clip.frames):
        fp = f"frames/frame_{k:04d}.ppm"
        dp = f"depths/depth_{k:04d}.egdp"
        write_image(outdir / fp, frame.color)
        write_depth(outdir / dp, frame.depth)
        frame_paths.append(fp)
        depth_paths.append(dp)
    write_mask(outdir / "masks/mask_0000.pgm", clip.mask)
    write_detections(outdir / "detections.json", clip.detections)
    write_tracks(outdir / "tracks.egtr", clip.tracks.positions,
                 clip.tracks.visibility)

    script = clip.script
    manifest = ClipManifest(
        clip_id=script.clip_id,
        action_description=script.action,
        object_name=script.object_name,
        rigid=script.rigid,
        t_start=0.0,
        t_end=script.duration,
        fps=script.fps,
        intrinsics=clip.intrinsics,
        paths=ClipPaths(
            frames=tuple(frame_paths),
            depths=tuple(depth_paths),
            masks=("masks/mask_0000.pgm",),
            detections="detections.json",
            tracks="tracks.egtr",
        ),
        base_dir=outdir,
    )
    manifest_path = outdir / "manifest.json"
    manifest.save(manifest_path)
    script.save(outdir / "script.json")

    gt = clip.gt_trajectory
    gt_record = TrajectoryRecord(
        clip_id=script.clip_id,
        action_description=script.action,
        object_name=script.object_name,
        poses=gt.poses,
        bbox0=gt.bbox0,
        intrinsics=clip.intrinsics,
        provenance={"source": "scripted-ground-truth", "seed": script.seed},
    )
    write_records(outdir / "gt_trajectory.jsonl", [gt_record])
    write_extrinsics(outdir / "gt_extrinsics.json", clip.gt_extrinsics)
    return manifest_path
