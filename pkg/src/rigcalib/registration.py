"""Joint multi-view registration of target sightings into a latent
calibration frame.

Every cloud is modeled as a rigidly transformed sample of one shared
isotropic Gaussian mixture with a uniform outlier class. EM alternates soft
assignment of points to components with closed-form updates of the mixture
and of the per-cloud rigid transforms (weighted Procrustes, no scale). The
gauge is fixed by holding the first cloud's transform at identity during EM;
afterwards everything is re-expressed so the calibration-frame origin sits at
the centroid of the mixture means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.cluster import kmeans_plusplus

from rigcalib.geometry import RigidTransform, apply, compose
from rigcalib.kernels import gmm_responsibilities
from rigcalib.scene import LidarScan
from rigcalib.ukf import VehiclePoseTrack

__all__ = [
    "CoplanarInputError",
    "DegenerateGeometryError",
    "GaussianMixture",
    "JointRegistration",
    "RegistrationResult",
    "joint_register",
    "oriented_bounding_box",
    "prealign",
    "register_clouds",
]

# Canonical OBB corner signs along the principal axes (descending eigenvalue).
OBB_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, +1, -1],
        [+1, -1, +1],
        [-1, +1, +1],
        [+1, +1, +1],
    ],
    dtype=float,
)


class DegenerateGeometryError(RuntimeError):
    """A Procrustes solve hit rank-deficient geometry."""


class CoplanarInputError(ValueError):
    """Bounding-box input points span fewer than three dimensions."""


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic mixture plus one uniform outlier class of weight
    `outlier_weight` and density `outlier_density`."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    outlier_weight: float
    outlier_density: float

    def __post_init__(self) -> None:
        if np.any(self.weights < 0.0) or self.outlier_weight < 0.0:
            raise ValueError("mixture weights must be non-negative")
        total = float(self.weights.sum()) + self.outlier_weight
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {total}")
        if np.any(self.variances <= 0.0):
            raise ValueError("variances must be positive")


@dataclass
class JointRegistration:
    """Raw joint-EM output over an ordered list of input clouds."""

    transforms: list[RigidTransform]
    mixture: GaussianMixture
    shape_points: np.ndarray
    obb: np.ndarray
    log_likelihoods: np.ndarray
    converged: bool


@dataclass(frozen=True)
class RegistrationResult:
    """Calibration-frame transforms for every (frame, sensor) sighting with
    enough target points, plus the reconstructed shape and its box."""

    calib_from_sensor: dict[tuple[int, str], RigidTransform]
    shape_points: np.ndarray
    obb: np.ndarray
    joint: JointRegistration

    @property
    def members(self) -> tuple[tuple[int, str], ...]:
        return tuple(self.calib_from_sensor)


def prealign(
    scans,
    initial_mounts: dict[str, RigidTransform],
    track: VehiclePoseTrack,
) -> dict[tuple[int, str], np.ndarray]:
    """Transform raw scans into the reference frame using the initial mount
    guesses and the vehicle poses at the scan timestamps."""
    clouds: dict[tuple[int, str], np.ndarray] = {}
    for scan in scans:
        chain = alignment_chain(scan, initial_mounts, track)
        clouds[(scan.frame_index, scan.sensor_id)] = apply(chain, scan.points)
    return clouds


def alignment_chain(
    scan: LidarScan, initial_mounts: dict[str, RigidTransform], track: VehiclePoseTrack
) -> RigidTransform:
    """Reference-from-sensor chain for one scan: vehicle pose times mount."""
    pose = track.pose_at_time(scan.timestamp)
    return compose(pose, initial_mounts[scan.sensor_id])


def _weighted_procrustes(source: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> RigidTransform:
    """Rigid transform minimizing sum w_i ||R s_i + t - c_i||^2 (no scale)."""
    wsum = weights.sum()
    src_mean = weights @ source / wsum
    tgt_mean = weights @ targets / wsum
    cov = (weights[:, None] * (targets - tgt_mean)).T @ (source - src_mean)
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError("rank-deficient Procrustes cross-covariance")
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = tgt_mean - rot @ src_mean
    return RigidTransform.from_matrix(m)


def _weighted_translation(
    source: np.ndarray, targets: np.ndarray, weights: np.ndarray, current: RigidTransform
) -> RigidTransform:
    """Translation-only update keeping the current rotation fixed."""
    wsum = weights.sum()
    src_mean = weights @ source / wsum
    tgt_mean = weights @ targets / wsum
    rot = current.rotation_matrix()
    return RigidTransform(current.rotation, tgt_mean - rot @ src_mean)


def _init_mixture(
    all_points: np.ndarray, components: int, outlier_weight: float, seed: int
) -> GaussianMixture:
    components = min(components, len(all_points))
    means, _ = kmeans_plusplus(all_points, n_clusters=components, random_state=seed)
    if components > 1:
        # Median is robust to stray far-off components grabbing a big radius.
        nn_dist, _ = cKDTree(means).query(means, k=2)
        var0 = float(np.median(nn_dist[:, 1]) ** 2)
    else:
        var0 = float(np.var(all_points))
    var0 = max(var0, 1e-6)
    weights = np.full(components, (1.0 - outlier_weight) / components)
    # Rotation-invariant outlier support: bounding sphere of the points.
    centroid = all_points.mean(axis=0)
    radius = float(np.max(np.linalg.norm(all_points - centroid, axis=1)))
    volume = max(4.0 / 3.0 * np.pi * radius**3, 1e-9)
    return GaussianMixture(
        means, np.full(components, var0), weights, outlier_weight, 1.0 / volume
    )


def joint_register(
    clouds,
    components: int = 100,
    max_iters: int = 80,
    tol: float = 1e-6,
    outlier_weight: float = 0.05,
    seed: int = 0,
    prune_weight_factor: float = 0.2,
    coarse_sigma: float = 0.25,
    coarse_iters: int = 25,
    variance_update_every: int = 1,
) -> JointRegistration:
    """Jointly register clouds to a latent frame via EM.

    The first `coarse_iters` iterations hold the component variances frozen
    at coarse_sigma^2 so badly pre-aligned clouds are pulled together at a
    coarse scale before the mixture sharpens; freezing one coordinate block
    keeps every step a conditional maximization, so the log-likelihood stays
    monotone across the whole schedule. `tol` is the mean per-point
    log-likelihood gain under which EM stops (checked after the coarse
    phase). The returned transforms map each input cloud into the
    calibration frame.
    """
    clouds = [np.asarray(c, dtype=float) for c in clouds]
    if len(clouds) < 2 or any(len(c) == 0 for c in clouds):
        raise ValueError("joint registration needs at least 2 non-empty clouds")

    # Work in a frame centered on the data so rotations act about the target,
    # not about a distant world origin (conditions every Procrustes solve).
    center = np.concatenate(clouds).mean(axis=0)
    clouds = [c - center for c in clouds]

    stacked = np.concatenate(clouds)
    n_total = len(stacked)
    offsets = np.cumsum([0] + [len(c) for c in clouds])
    mixture = _init_mixture(stacked, components, outlier_weight, seed)
    means, weights = mixture.means, mixture.weights
    fine_variances = mixture.variances
    coarse = max(0, int(coarse_iters))
    if coarse > 0:
        variances = np.full_like(fine_variances, max(coarse_sigma, 1e-3) ** 2)
    else:
        variances = fine_variances
    log_outlier = np.log(mixture.outlier_weight * mixture.outlier_density)

    transforms = [RigidTransform.identity() for _ in clouds]
    log_likelihoods: list[float] = []
    converged = False
    gain = np.inf

    for iteration in range(max_iters):
        in_coarse_phase = iteration < coarse
        moved = np.concatenate([apply(t, c) for t, c in zip(transforms, clouds)])
        resp, loglik = gmm_responsibilities(
            moved, means, variances, np.log(weights), log_outlier
        )
        if log_likelihoods and not in_coarse_phase and iteration != coarse:
            gain = (loglik - log_likelihoods[-1]) / n_total
            if gain < tol:
                log_likelihoods.append(loglik)
                converged = True
                break
        log_likelihoods.append(loglik)

        # Per-cloud rigid transforms (cloud 0 pinned as the gauge). While the
        # mixture is frozen coarse, rotations are ill-determined, so only the
        # translations move; the fine phase solves the full rigid alignment.
        inv_var = 1.0 / variances
        for m in range(1, len(clouds)):
            rows = resp[offsets[m] : offsets[m + 1]]
            w = rows * inv_var
            w_sum = w.sum(axis=1)
            ok = w_sum > 1e-12
            if np.count_nonzero(ok) < 3:
                raise DegenerateGeometryError("cloud lost all inlier support")
            targets = (w[ok] @ means) / w_sum[ok, None]
            if in_coarse_phase:
                transforms[m] = _weighted_translation(
                    clouds[m][ok], targets, w_sum[ok], transforms[m]
                )
            else:
                transforms[m] = _weighted_procrustes(clouds[m][ok], targets, w_sum[ok])

        moved = np.concatenate([apply(t, c) for t, c in zip(transforms, clouds)])
        counts = resp.sum(axis=0)
        active = counts > 1e-12
        proj = resp.T @ moved
        means = np.where(active[:, None], proj / np.maximum(counts, 1e-12)[:, None], means)
        # Updating the variance block only every few sweeps slows the
        # sharpening relative to the slow transform modes; skipping a block
        # is a valid ECM schedule, so monotonicity is unaffected.
        if not in_coarse_phase and (iteration - coarse) % max(1, variance_update_every) == 0:
            sq = resp.T @ np.einsum("ij,ij->i", moved, moved)
            dev = sq - 2.0 * np.einsum("jk,jk->j", means, proj) + counts * np.einsum(
                "jk,jk->j", means, means
            )
            variances = np.where(
                active, np.maximum(dev / np.maximum(3.0 * counts, 1e-12), 1e-10), variances
            )
        weights = (1.0 - outlier_weight) * counts / max(counts.sum(), 1e-300)
        weights = np.maximum(weights, 1e-300)

    # Re-anchor the calibration frame at the centroid of the mixture means
    # and fold the data-centering shift back into the transforms.
    shift = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), -means.mean(axis=0))
    uncenter = RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), -center)
    transforms = [compose(compose(shift, t), uncenter) for t in transforms]
    means = means - means.mean(axis=0)

    keep = weights > prune_weight_factor / len(weights)
    shape_points = means[keep] if np.count_nonzero(keep) >= 4 else means
    mixture = GaussianMixture(
        means,
        variances,
        weights / (weights.sum() / (1.0 - outlier_weight)),
        outlier_weight,
        mixture.outlier_density,
    )
    return JointRegistration(
        transforms=transforms,
        mixture=mixture,
        shape_points=shape_points,
        obb=oriented_bounding_box(shape_points),
        log_likelihoods=np.asarray(log_likelihoods),
        converged=converged or gain <= 10.0 * tol,
    )


def oriented_bounding_box(points: np.ndarray) -> np.ndarray:
    """PCA-aligned bounding box of a point set as 8 canonically ordered
    corners.

    Axes are the principal directions sorted by descending eigenvalue, each
    flipped so its dot with (1, 1, 1) is non-negative; corners follow
    OBB_CORNER_SIGNS in that axis order.
    """
    points = np.asarray(points, dtype=float)
    if len(points) < 4:
        raise CoplanarInputError("need at least 4 points for a bounding box")
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < 1e-12 * max(eigvals[2], 1e-300):
        raise CoplanarInputError("points are coplanar within tolerance")
    axes = eigvecs[:, ::-1]
    flip = axes.sum(axis=0) < 0.0
    axes[:, flip] *= -1.0
    proj = centered @ axes
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    center_local = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    corners_local = center_local + OBB_CORNER_SIGNS * half
    return centroid + corners_local @ axes.T


def register_clouds(
    clouds: dict[tuple[int, str], np.ndarray],
    chains: dict[tuple[int, str], RigidTransform],
    min_points: int = 50,
    **em_kwargs,
) -> RegistrationResult:
    """Register preprocessed reference-frame clouds and express the results
    as calibration-from-sensor transforms.

    `chains` carries the reference-from-sensor pre-alignment transform of
    each cloud; membership is limited to clouds with at least `min_points`
    points.
    """
    keys = sorted(k for k, c in clouds.items() if len(c) >= min_points)
    if len(keys) < 2:
        raise ValueError(f"only {len(keys)} clouds with >= {min_points} points")
    joint = joint_register([clouds[k] for k in keys], **em_kwargs)
    calib_from_sensor = {
        k: compose(t, chains[k]) for k, t in zip(keys, joint.transforms)
    }
    return RegistrationResult(calib_from_sensor, joint.shape_points, joint.obb, joint)
