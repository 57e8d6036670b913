"""6DoF object manipulation trajectories from egocentric RGB-D clips:
extraction, tokenization, evaluation, and a synthetic ground-truth oracle."""

from .codec import BinSpec, TokenizedTrajectory, decode_token_stream, discretize, fit_bins, undiscretize
from .config import IcpParams, PipelineConfig, RansacParams
from .errors import (
    CurationReject,
    DecodeError,
    DegenerateGeometryError,
    InputError,
    RegistrationFailure,
)
from .extraction import (
    DetectionBox,
    ObjectTrajectory,
    OrientedBox3D,
    SegmentationMask,
    TrackSet,
    assemble_trajectory,
    curate,
    extract_position,
    extract_rotation,
    min_bounding_box,
    project_tracks,
    select_object_mask,
)
from .geometry import (
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
from .metrics import TrajectoryPair, ade, evaluate_batch, fde, geodesic_distance, normalize_length
from .pipeline import ClipBundle, TrajectoryRecord, bundle_from_synth, extract_clip
from .registration import (
    RegistrationResult,
    RgbdFrame,
    chain_extrinsics,
    colored_icp,
    compute_fpfh,
    estimate_pairwise_motion,
    ransac_global_registration,
)
from .synth import MotionPrimitive, NoiseSpec, ObjectSpec, SceneScript, SynthClip, end_to_end_check, generate

__version__ = "0.1.0"
