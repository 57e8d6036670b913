"""Uniform 256-bin trajectory discretization and token-stream codec.

Each of the six pose dimensions (x, y, z, roll, pitch, yaw) maps onto 256
uniformly spaced bins inside per-dimension bounds; a trajectory becomes an
N x 6 integer grid and, flattened row-major with a trailing stop token, a
token stream for autoregressive models. Trajectories are cropped to 20
poses before tokenization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, InputError

NUM_BINS = 256
MAX_POSES = 20
DIM_NAMES = ("x", "y", "z", "roll", "pitch", "yaw")
ROTATION_DIMS = (3, 4, 5)
DEGENERATE_FLOOR = 1e-3


@dataclass(frozen=True)
class BinSpec:
    """Per-dimension quantization bounds; always 256 bins."""

    lows: np.ndarray  # (6,)
    highs: np.ndarray  # (6,)

    def __post_init__(self):
        lows = np.asarray(self.lows, dtype=np.float64).reshape(6)
        highs = np.asarray(self.highs, dtype=np.float64).reshape(6)
        if np.any(lows >= highs):
            raise InputError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def widths(self) -> np.ndarray:
        return self.highs - self.lows

    def to_dict(self) -> dict:
        return {
            name: {"lo": float(self.lows[d]), "hi": float(self.highs[d])}
            for d, name in enumerate(DIM_NAMES)
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        missing = [n for n in DIM_NAMES if n not in d]
        if missing:
            raise InputError(f"bin spec missing dimensions: {missing}")
        lows = [float(d[n]["lo"]) for n in DIM_NAMES]
        highs = [float(d[n]["hi"]) for n in DIM_NAMES]
        return cls(np.array(lows), np.array(highs))

    @classmethod
    def load(cls, path) -> "BinSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class TokenizedTrajectory:
    """N x 6 integer grid plus its flattened token stream (stop-terminated)."""

    grid: np.ndarray  # (N, 6) ints in [0, 255]
    token_stream: np.ndarray  # (6N + 1,) ints, ends with base_id + 256
    base_id: int = 0
    clamp_count: int = 0  # values outside bounds at discretization time

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.int64)
        stream = np.asarray(self.token_stream, dtype=np.int64)
        if grid.ndim != 2 or grid.shape[1] != 6:
            raise InputError(f"grid must be (N, 6), got {grid.shape}")
        if grid.size and (grid.min() < 0 or grid.max() >= NUM_BINS):
            raise InputError("grid values must lie in [0, 255]")
        if stream.shape != (6 * len(grid) + 1,):
            raise InputError("token stream length must be 6N + 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "token_stream", stream)

    @classmethod
    def from_grid(
        cls, grid: np.ndarray, base_id: int = 0, clamp_count: int = 0
    ) -> "TokenizedTrajectory":
        grid = np.asarray(grid, dtype=np.int64)
        stream = np.concatenate([grid.reshape(-1) + base_id, [stop_id(base_id)]])
        return cls(grid=grid, token_stream=stream, base_id=base_id,
                   clamp_count=clamp_count)


def stop_id(base_id: int = 0) -> int:
    return base_id + NUM_BINS


def fit_bins(corpus, margin: float = 0.05) -> BinSpec:
    """Per-dimension corpus min/max expanded by ``margin`` of the range.

    Rotation dimensions are clamped to [-pi, pi]; degenerate ranges are
    widened to an absolute floor of 1e-3.
    """
    if not corpus:
        raise InputError("cannot fit bins on an empty corpus")
    all_poses = np.vstack([np.asarray(t.poses, dtype=np.float64) for t in corpus])
    lows = all_poses.min(axis=0)
    highs = all_poses.max(axis=0)
    span = highs - lows
    lows = lows - margin * span
    highs = highs + margin * span
    for d in ROTATION_DIMS:
        lows[d] = max(lows[d], -np.pi)
        highs[d] = min(highs[d], np.pi)
    for d in range(6):
        if highs[d] - lows[d] < DEGENERATE_FLOOR:
            center = (lows[d] + highs[d]) / 2.0
            lows[d] = center - DEGENERATE_FLOOR / 2.0
            highs[d] = center + DEGENERATE_FLOOR / 2.0
            if d in ROTATION_DIMS:  # keep inside the canonical range
                if lows[d] < -np.pi:
                    highs[d] += -np.pi - lows[d]
                    lows[d] = -np.pi
                elif highs[d] > np.pi:
                    lows[d] -= highs[d] - np.pi
                    highs[d] = np.pi
    return BinSpec(lows, highs)


def discretize(traj, bins: BinSpec, base_id: int = 0) -> TokenizedTrajectory:
    """Quantize poses: bin = floor((v - lo) / (hi - lo) * 256), clamped to
    [0, 255]. Out-of-bounds values clamp and are counted; trajectories longer
    than 20 poses are cropped to the first 20."""
    poses = np.asarray(getattr(traj, "poses", traj), dtype=np.float64)
    if poses.ndim != 2 or poses.shape[1] != 6:
        raise InputError(f"poses must be (N, 6), got {poses.shape}")
    poses = poses[:MAX_POSES]
    clamped = int(np.sum((poses < bins.lows) | (poses > bins.highs)))
    raw = np.floor((poses - bins.lows) / bins.widths * NUM_BINS).astype(np.int64)
    grid = np.clip(raw, 0, NUM_BINS - 1)
    return TokenizedTrajectory.from_grid(grid, base_id=base_id, clamp_count=clamped)


def undiscretize(tok, bins: BinSpec) -> np.ndarray:
    """Bin-center dequantization: v = lo + (bin + 0.5) * (hi - lo) / 256."""
    grid = np.asarray(getattr(tok, "grid", tok), dtype=np.int64)
    if grid.ndim != 2 or grid.shape[1] != 6:
        raise InputError(f"grid must be (N, 6), got {grid.shape}")
    if grid.size and (grid.min() < 0 or grid.max() >= NUM_BINS):
        raise InputError("grid values must lie in [0, 255]")
    return bins.lows + (grid + 0.5) * bins.widths / NUM_BINS


@dataclass(frozen=True)
class DecodedStream:
    poses: np.ndarray  # (N, 6) dequantized values
    grid: np.ndarray  # (N, 6) bins
    incomplete: bool  # a trailing partial pose group was discarded


def stream_to_grid(stream, base_id: int = 0) -> tuple[np.ndarray, bool]:
    """Parse 6-token groups until the stop token or stream end.

    Returns (grid, incomplete_flag); raises DecodeError (with the offending
    position) for ids outside the reserved [base_id, base_id + 256] range.
    """
    stream = np.asarray(stream, dtype=np.int64).reshape(-1)
    stop = stop_id(base_id)
    bad = (stream < base_id) | (stream > stop)
    if np.any(bad):
        pos = int(np.argmax(bad))
        raise DecodeError(
            f"token id {int(stream[pos])} at position {pos} outside "
            f"reserved range [{base_id}, {stop}]",
            position=pos,
        )
    stops = np.nonzero(stream == stop)[0]
    end = int(stops[0]) if len(stops) else len(stream)
    body = stream[:end] - base_id
    n_complete = len(body) // 6
    incomplete = len(body) % 6 != 0
    grid = body[: n_complete * 6].reshape(n_complete, 6)
    return grid, incomplete


def decode_token_stream(stream, bins: BinSpec, base_id: int = 0) -> DecodedStream:
    """Token stream -> dequantized poses (variable length, stop-aware)."""
    grid, incomplete = stream_to_grid(stream, base_id=base_id)
    return DecodedStream(
        poses=undiscretize(grid, bins), grid=grid, incomplete=incomplete
    )
