"""Pipeline configuration with registration parameter sets.

Defaults follow the registration settings the extraction pipeline was tuned
with: RANSAC at 0.03 m / 100k iterations / 0.999 confidence, colored ICP at
0.008 m / 100 iterations / 1e-6 relative tolerances. Voxel size and FPFH
radius are exposed because no canonical values exist for them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import InputError


@dataclass(frozen=True)
class RansacParams:
    distance_threshold: float = 0.03
    max_iterations: int = 100_000
    confidence: float = 0.999

    def __post_init__(self):
        if self.distance_threshold <= 0:
            raise InputError("RANSAC distance threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise InputError("RANSAC confidence must be in (0, 1)")
        if self.max_iterations < 1:
            raise InputError("RANSAC needs at least one iteration")


@dataclass(frozen=True)
class IcpParams:
    distance_threshold: float = 0.008
    max_iterations: int = 100
    relative_fitness: float = 1e-6
    relative_rmse: float = 1e-6
    color_weight: float = 0.968  # weight on the point-to-plane term

    def __post_init__(self):
        if self.distance_threshold <= 0:
            raise InputError("ICP distance threshold must be positive")
        if self.relative_fitness <= 0 or self.relative_rmse <= 0:
            raise InputError("ICP convergence tolerances must be positive")
        if not 0.0 <= self.color_weight <= 1.0:
            raise InputError("color_weight must lie in [0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the extraction pipeline needs beyond the input files."""

    ransac: RansacParams = field(default_factory=RansacParams)
    icp: IcpParams = field(default_factory=IcpParams)
    voxel_size: float = 0.01
    fpfh_radius: float = 0.05
    normal_k: int = 30
    matcher_points: int = 4000  # descriptor-matching subsample cap
    seed: int = 0
    min_detection_confidence: float = 0.3
    min_valid_depth_points: int = 100
    min_pair_fitness: float = 0.0  # 0 disables the fitness-based reject
    max_pair_rmse: float = float("inf")

    def __post_init__(self):
        if self.voxel_size <= 0 or self.fpfh_radius <= 0:
            raise InputError("voxel size and FPFH radius must be positive")
        if self.normal_k < 3:
            raise InputError("normal estimation needs k >= 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        ransac = RansacParams(**d.pop("ransac", {}))
        icp = IcpParams(**d.pop("icp", {}))
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(ransac=ransac, icp=icp, **known)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
