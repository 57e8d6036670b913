"""Frame-to-frame camera motion recovery.

FPFH descriptors feed a seeded RANSAC global registration whose result is
refined by colored ICP (joint photometric + point-to-plane objective);
per-pair motions chain into per-frame extrinsics relative to frame 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .config import IcpParams, PipelineConfig, RansacParams
from .errors import InputError, RegistrationFailure
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    PointCloud,
    RigidTransform,
    backproject,
    estimate_normals,
    rotvec_to_matrix,
    voxel_downsample,
)

FPFH_BINS = 11  # per angular feature; 3 features -> 33-dim descriptor
EDGE_PRUNE_RATIO = 0.9


@dataclass(frozen=True)
class RgbdFrame:
    """One RGB-D frame: color image (H, W, 3) in [0, 1] plus depth map."""

    color: np.ndarray
    depth: DepthImage


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    fitness: float  # inlier fraction of source points
    inlier_rmse: float  # meters, Euclidean over inlier correspondences
    seed: int | None = None


def compute_fpfh(cloud: PointCloud, radius: float) -> np.ndarray:
    """Fast Point Feature Histograms, one 33-bin descriptor per point.

    Per point, the simplified histogram (SPFH) bins the Darboux-frame angles
    (alpha, phi, theta) of every neighbor pair within ``radius``; the final
    descriptor re-weights neighboring SPFHs by inverse distance:
    FPFH(p) = SPFH(p) + 1/k * sum_k SPFH(p_k) / |p - p_k|.
    """
    if cloud.normals is None:
        raise InputError("FPFH requires normals")
    if radius <= 0:
        raise InputError("FPFH radius must be positive")
    pts = cloud.points
    nrm = cloud.normals
    n = len(pts)
    spfh = np.zeros((n, 3 * FPFH_BINS))
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return spfh
    i, j = pairs[:, 0], pairs[:, 1]
    d = pts[j] - pts[i]
    dist = np.linalg.norm(d, axis=1)
    ok = dist > 1e-12
    i, j, d, dist = i[ok], j[ok], d[ok], dist[ok]
    dhat = d / dist[:, None]

    # the point whose normal makes the smaller angle with the line is the
    # Darboux frame source; swap and flip the direction otherwise. Near-ties
    # fall back to index order so the choice is stable under rigid motion.
    a1 = np.einsum("mi,mi->m", nrm[i], dhat)
    a2 = np.einsum("mi,mi->m", nrm[j], dhat)
    swap = (np.abs(a2) - np.abs(a1)) > 1e-9
    u = np.where(swap[:, None], nrm[j], nrm[i])
    nt = np.where(swap[:, None], nrm[i], nrm[j])
    direction = np.where(swap[:, None], -dhat, dhat)
    phi = np.where(swap, -a2, a1)

    v = np.cross(direction, u)
    vnorm = np.linalg.norm(v, axis=1)
    ok = vnorm > 1e-12  # direction parallel to the source normal: no frame
    i, j, dist, u, nt, direction, phi, v, vnorm = (
        i[ok], j[ok], dist[ok], u[ok], nt[ok], direction[ok], phi[ok],
        v[ok], vnorm[ok],
    )
    v /= vnorm[:, None]
    w = np.cross(u, v)
    alpha = np.einsum("mi,mi->m", v, nt)
    theta = np.arctan2(np.einsum("mi,mi->m", w, nt), np.einsum("mi,mi->m", u, nt))

    def bin_of(values, lo, hi):
        idx = np.floor((values - lo) / (hi - lo) * FPFH_BINS).astype(np.int64)
        return np.clip(idx, 0, FPFH_BINS - 1)

    cols = np.concatenate(
        [
            bin_of(alpha, -1.0, 1.0),
            bin_of(phi, -1.0, 1.0) + FPFH_BINS,
            bin_of(theta, -np.pi, np.pi) + 2 * FPFH_BINS,
        ]
    )
    rows = np.concatenate([np.tile(i, 3), np.tile(j, 3)])
    flat = np.bincount(
        rows * (3 * FPFH_BINS) + np.tile(cols, 2), minlength=n * 3 * FPFH_BINS
    )
    spfh = flat.reshape(n, 3 * FPFH_BINS).astype(np.float64)

    weights = 1.0 / dist
    wmat = sp.coo_matrix((weights, (i, j)), shape=(n, n))
    wmat = (wmat + wmat.T).tocsr()
    counts = np.bincount(np.concatenate([i, j]), minlength=n).astype(np.float64)
    neighbor_term = wmat @ spfh / np.maximum(counts, 1.0)[:, None]
    return spfh + neighbor_term


def _mutual_matches(source_fpfh: np.ndarray, target_fpfh: np.ndarray) -> np.ndarray:
    """Mutual nearest neighbors in descriptor space, as (src, tgt) index pairs."""
    fwd = _nearest_rows(source_fpfh, target_fpfh)
    bwd = _nearest_rows(target_fpfh, source_fpfh)
    src = np.arange(len(source_fpfh))
    keep = bwd[fwd] == src
    return np.column_stack([src[keep], fwd[keep]])


def _nearest_rows(a: np.ndarray, b: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """argmin_j ||a_i - b_j|| per row, chunked so the distance matrix stays small."""
    b_sq = np.einsum("ij,ij->i", b, b)
    out = np.empty(len(a), dtype=np.int64)
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk]
        d = b_sq[None, :] - 2.0 * (block @ b.T)
        out[start : start + chunk] = np.argmin(d, axis=1)
    return out


def _fit_rigid(src: np.ndarray, tgt: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform src -> tgt (SVD, reflection-corrected)."""
    cs = src.mean(axis=0)
    ct = tgt.mean(axis=0)
    h = (src - cs).T @ (tgt - ct)
    u, _, vt = np.linalg.svd(h)
    rot = vt.T @ u.T
    if np.linalg.det(rot) < 0:
        vt[-1] *= -1.0
        rot = vt.T @ u.T
    return RigidTransform(rot, ct - rot @ cs)


def _edges_compatible(src: np.ndarray, tgt: np.ndarray, ratio: float) -> bool:
    for a in range(len(src)):
        for b in range(a + 1, len(src)):
            es = np.linalg.norm(src[a] - src[b])
            et = np.linalg.norm(tgt[a] - tgt[b])
            if es < ratio * et or et < ratio * es:
                return False
    return True


def ransac_global_registration(
    source: PointCloud,
    target: PointCloud,
    source_fpfh: np.ndarray,
    target_fpfh: np.ndarray,
    params: RansacParams = RansacParams(),
    seed: int = 0,
) -> RegistrationResult:
    """Coarse source->target alignment from FPFH correspondences.

    Samples 3 mutual-nearest-neighbor correspondences per iteration (edge
    lengths pruned at ratio 0.9), keeps the transform with the most inliers
    under the distance threshold, and stops early once the confidence bound
    on having seen an all-inlier sample is met. Deterministic for a fixed
    seed.
    """
    if len(source) == 0 or len(target) == 0:
        raise InputError("cannot register empty clouds")
    if len(source_fpfh) != len(source) or len(target_fpfh) != len(target):
        raise InputError("descriptors not parallel to cloud points")
    corres = _mutual_matches(source_fpfh, target_fpfh)
    if len(corres) < 3:
        raise RegistrationFailure(
            f"only {len(corres)} FPFH correspondences, need at least 3"
        )
    src_pts = source.points[corres[:, 0]]
    tgt_pts = target.points[corres[:, 1]]
    m = len(corres)
    rng = np.random.default_rng(seed)
    thr = params.distance_threshold
    best_inliers = -1
    best_rmse = np.inf
    best_transform = None
    required = params.max_iterations
    it = 0
    while it < min(required, params.max_iterations):
        it += 1
        sample = rng.choice(m, size=3, replace=False)
        s3, t3 = src_pts[sample], tgt_pts[sample]
        if not _edges_compatible(s3, t3, EDGE_PRUNE_RATIO):
            continue
        candidate = _fit_rigid(s3, t3)
        d = np.linalg.norm(candidate.apply(src_pts) - tgt_pts, axis=1)
        inl = d < thr
        ninl = int(inl.sum())
        if ninl < 3:
            continue
        rmse = float(np.sqrt(np.mean(d[inl] ** 2)))
        if ninl > best_inliers or (ninl == best_inliers and rmse < best_rmse):
            best_inliers, best_rmse, best_transform = ninl, rmse, candidate
            w3 = (ninl / m) ** 3
            if w3 >= 1.0 - 1e-12:
                required = it
            else:
                required = int(
                    np.ceil(np.log(1.0 - params.confidence) / np.log(1.0 - w3))
                )
    if best_transform is None:
        raise RegistrationFailure("RANSAC found no transform with 3+ inliers")
    # re-fit on the best inlier set for the final estimate
    d = np.linalg.norm(best_transform.apply(src_pts) - tgt_pts, axis=1)
    refined = _fit_rigid(src_pts[d < thr], tgt_pts[d < thr])
    d_ref = np.linalg.norm(refined.apply(src_pts) - tgt_pts, axis=1)
    if int((d_ref < thr).sum()) >= 3:
        d = d_ref
    else:
        refined = best_transform  # refinement made it worse
    inl = d < thr
    return RegistrationResult(
        transform=refined,
        fitness=float(inl.sum()) / len(source),
        inlier_rmse=float(np.sqrt(np.mean(d[inl] ** 2))),
        seed=seed,
    )


def _color_intensity(colors: np.ndarray) -> np.ndarray:
    return colors.mean(axis=1)


def _color_gradients(cloud: PointCloud, k: int = 15) -> np.ndarray:
    """Per-point intensity gradient in the local tangent plane.

    Fits I(q_k) ~ I(q) + d . (q_k' - q) over the k nearest neighbors, with
    q_k' the neighbor projected onto the tangent plane and the constraint
    d . n = 0 folded into the normal equations.
    """
    pts, nrm = cloud.points, cloud.normals
    intensity = _color_intensity(cloud.colors)
    k = min(k, len(pts) - 1)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    neigh = pts[idx[:, 1:]]  # (N, k, 3)
    rel = neigh - pts[:, None, :]
    along_n = np.einsum("nki,ni->nk", rel, nrm)
    rel_proj = rel - along_n[:, :, None] * nrm[:, None, :]
    di = intensity[idx[:, 1:]] - intensity[:, None]
    a = np.einsum("nki,nkj->nij", rel_proj, rel_proj)
    a += nrm[:, :, None] * nrm[:, None, :]  # constraint row n^T d = 0
    a += 1e-12 * np.eye(3)
    b = np.einsum("nki,nk->ni", rel_proj, di)
    return np.linalg.solve(a, b[..., None])[..., 0]


def colored_icp(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform,
    params: IcpParams = IcpParams(),
) -> RegistrationResult:
    """Refine ``init`` by Gauss-Newton on a joint color + geometry objective.

    Per correspondence (nearest target point within the distance threshold)
    the residual mixes the point-to-plane distance (weight ``color_weight``)
    with the difference between the source intensity and the target's local
    intensity model (weight 1 - ``color_weight``). Stops when both the
    relative fitness and relative RMSE changes drop below the tolerances.
    """
    for name, cloud in (("source", source), ("target", target)):
        if cloud.colors is None or cloud.normals is None:
            raise InputError(f"colored ICP requires colors and normals on {name}")
    lam = params.color_weight
    thr = params.distance_threshold
    tgt_pts, tgt_nrm = target.points, target.normals
    tgt_int = _color_intensity(target.colors)
    src_int = _color_intensity(source.colors)
    grad = _color_gradients(target)
    tree = cKDTree(tgt_pts)
    transform = init
    prev_fitness = prev_rmse = None
    fitness = rmse = 0.0
    for _ in range(params.max_iterations):
        moved = transform.apply(source.points)
        dist, idx = tree.query(moved)
        mask = dist < thr
        ncorr = int(mask.sum())
        if ncorr < 6:
            raise RegistrationFailure(
                f"only {ncorr} ICP correspondences under {thr} m",
                best_effort=RegistrationResult(init, 0.0, float("inf")),
            )
        fitness = ncorr / len(source)
        rmse = float(np.sqrt(np.mean(dist[mask] ** 2)))
        if prev_fitness is not None:
            df = abs(fitness - prev_fitness) / max(prev_fitness, 1e-12)
            dr = abs(rmse - prev_rmse) / max(prev_rmse, 1e-12)
            if df < params.relative_fitness and dr < params.relative_rmse:
                break
        prev_fitness, prev_rmse = fitness, rmse

        p = moved[mask]
        q = tgt_pts[idx[mask]]
        nq = tgt_nrm[idx[mask]]
        dq = grad[idx[mask]]
        r_geo = np.einsum("mi,mi->m", p - q, nq)
        proj = p - np.einsum("mi,mi->m", p - q, nq)[:, None] * nq
        r_col = tgt_int[idx[mask]] + np.einsum("mi,mi->m", dq, proj - q) - src_int[mask]

        j_geo = np.concatenate([np.cross(p, nq), nq], axis=1)  # (m, 6)
        j_col = np.concatenate([np.cross(p, dq), dq], axis=1)
        lhs = lam * (j_geo.T @ j_geo) + (1.0 - lam) * (j_col.T @ j_col)
        rhs = -(lam * (j_geo.T @ r_geo) + (1.0 - lam) * (j_col.T @ r_col))
        try:
            delta = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        step = RigidTransform(rotvec_to_matrix(delta[:3]), delta[3:])
        transform = step.compose(transform)

    # metrics for the returned transform on its own correspondence set
    moved = transform.apply(source.points)
    dist, _ = tree.query(moved)
    mask = dist < thr
    if not mask.any():
        raise RegistrationFailure(
            "no ICP correspondences for the converged transform",
            best_effort=RegistrationResult(init, 0.0, float("inf")),
        )
    return RegistrationResult(
        transform=transform,
        fitness=float(mask.sum()) / len(source),
        inlier_rmse=float(np.sqrt(np.mean(dist[mask] ** 2))),
    )


def estimate_pairwise_motion(
    frame_t: RgbdFrame,
    frame_t1: RgbdFrame,
    intrinsics: CameraIntrinsics,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    frame_index: int | None = None,
) -> RegistrationResult:
    """Full two-frame pipeline; returns the frame_t1 -> frame_t transform.

    backproject -> voxel downsample -> normals -> FPFH -> RANSAC -> colored
    ICP. Frames with fewer valid depth pixels than the configured floor are
    a hard registration failure.
    """
    clouds = []
    for which, frame in (("first", frame_t), ("second", frame_t1)):
        cloud = backproject(frame.depth, intrinsics, frame.color)
        if len(cloud) < config.min_valid_depth_points:
            raise RegistrationFailure(
                f"{which} frame has {len(cloud)} valid depth points "
                f"(minimum {config.min_valid_depth_points})",
                frame_index=frame_index,
            )
        down = voxel_downsample(cloud, config.voxel_size)
        if len(down) < config.normal_k + 1:
            raise RegistrationFailure(
                f"{which} frame too sparse after downsampling ({len(down)} points)",
                frame_index=frame_index,
            )
        clouds.append(estimate_normals(down, config.normal_k))
    target, source = clouds  # source = frame_t1, target = frame_t

    rng = np.random.default_rng(seed)
    match_source, match_target = source, target
    fpfh_source = compute_fpfh(source, config.fpfh_radius)
    fpfh_target = compute_fpfh(target, config.fpfh_radius)
    if len(source) > config.matcher_points:
        pick = np.sort(rng.choice(len(source), config.matcher_points, replace=False))
        match_source, fpfh_source = source.select(pick), fpfh_source[pick]
    if len(target) > config.matcher_points:
        pick = np.sort(rng.choice(len(target), config.matcher_points, replace=False))
        match_target, fpfh_target = target.select(pick), fpfh_target[pick]

    try:
        coarse = ransac_global_registration(
            match_source, match_target, fpfh_source, fpfh_target,
            config.ransac, seed=seed,
        )
        refined = colored_icp(source, target, coarse.transform, config.icp)
    except RegistrationFailure as err:
        err.frame_index = frame_index
        raise
    return RegistrationResult(
        transform=refined.transform,
        fitness=refined.fitness,
        inlier_rmse=refined.inlier_rmse,
        seed=seed,
    )


def chain_extrinsics(pairwise: list[RigidTransform]) -> list[RigidTransform]:
    """Fold consecutive-pair transforms into frame-k -> frame-0 extrinsics.

    ``pairwise[k]`` maps frame k+1 coordinates to frame k coordinates; the
    output has length len(pairwise) + 1 with the identity first.
    """
    out = [RigidTransform.identity()]
    for step in pairwise:
        out.append(out[-1].compose(step))
    return out
