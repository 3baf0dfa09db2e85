"""Point-cloud conditioning ahead of registration: RANSAC ground-plane
removal, voxel-grid downsampling and statistical outlier removal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "InsufficientPointsError",
    "NoPlaneFoundError",
    "PlaneModel",
    "ransac_ground_removal",
    "statistical_outlier_removal",
    "voxel_downsample",
]


class NoPlaneFoundError(RuntimeError):
    """RANSAC failed to find a consensus plane."""


class InsufficientPointsError(ValueError):
    """Cloud too small for the requested operation."""


@dataclass(frozen=True)
class PlaneModel:
    """Plane n . p + d = 0 with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal + self.offset)


def _fit_plane_lsq(points: np.ndarray, orient_like: np.ndarray) -> PlaneModel:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[2]
    if normal @ orient_like < 0:
        normal = -normal
    return PlaneModel(normal, -float(normal @ centroid))


def ransac_ground_removal(
    cloud: np.ndarray,
    iterations: int = 200,
    inlier_threshold: float = 0.05,
    rng=None,
    normal_prior: np.ndarray | None = None,
    max_tilt_deg: float = 30.0,
    min_consensus: float = 0.2,
) -> tuple[np.ndarray, PlaneModel]:
    """Remove the dominant plane from a cloud.

    Samples `iterations` random 3-point plane hypotheses, keeps the one with
    the largest inlier count, refits it to its inliers by least squares, and
    drops every point within `inlier_threshold` of the refit plane. With a
    `normal_prior` (e.g. +z after pre-alignment), hypotheses tilted more than
    `max_tilt_deg` away from it are rejected, which protects large flat
    target faces from being mistaken for ground.
    """
    cloud = np.asarray(cloud, dtype=float)
    if len(cloud) < 3:
        raise NoPlaneFoundError("need at least 3 points to fit a plane")
    if inlier_threshold <= 0.0:
        raise ValueError("inlier threshold must be positive")
    rng = np.random.default_rng(rng)

    picks = np.array([rng.choice(len(cloud), size=3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = cloud[picks[:, 0]], cloud[picks[:, 1]], cloud[picks[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    normals[valid] /= norms[valid, None]
    if normal_prior is not None:
        prior = np.asarray(normal_prior, dtype=float)
        prior = prior / np.linalg.norm(prior)
        cos_max = math.cos(math.radians(max_tilt_deg))
        valid &= np.abs(normals @ prior) >= cos_max
    if not np.any(valid):
        raise NoPlaneFoundError("no admissible plane hypothesis")

    offsets = -np.einsum("ij,ij->i", normals, p0)
    best_count = -1
    best_idx = -1
    chunk = max(1, int(5e6) // max(len(cloud), 1))
    for start in range(0, iterations, chunk):
        sl = slice(start, min(start + chunk, iterations))
        dists = np.abs(cloud @ normals[sl].T + offsets[sl])
        counts = np.where(valid[sl], (dists <= inlier_threshold).sum(axis=0), -1)
        local_best = int(np.argmax(counts))
        if counts[local_best] > best_count:
            best_count = int(counts[local_best])
            best_idx = start + local_best

    if best_count < max(3, int(min_consensus * len(cloud))):
        raise NoPlaneFoundError(
            f"best consensus {best_count}/{len(cloud)} below {min_consensus:.0%}"
        )

    rough = PlaneModel(normals[best_idx], float(offsets[best_idx]))
    inliers = cloud[rough.distances(cloud) <= inlier_threshold]
    plane = _fit_plane_lsq(inliers, rough.normal)
    keep = plane.distances(cloud) > inlier_threshold
    return cloud[keep], plane


def voxel_downsample(cloud: np.ndarray, leaf: float, anchor: np.ndarray | None = None) -> np.ndarray:
    """One centroid per occupied cell of an axis-aligned grid.

    The grid is anchored at the floor of the minimum coordinates unless an
    explicit anchor is given (a fixed anchor makes the operation idempotent).
    """
    if leaf <= 0.0:
        raise ValueError("leaf size must be positive")
    cloud = np.asarray(cloud, dtype=float)
    if len(cloud) == 0:
        return cloud.reshape(0, 3)
    if anchor is None:
        anchor = np.floor(cloud.min(axis=0))
    cells = np.floor((cloud - anchor) / leaf).astype(np.int64)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n_cells = int(inverse.max()) + 1
    sums = np.zeros((n_cells, 3))
    np.add.at(sums, inverse, cloud)
    counts = np.bincount(inverse, minlength=n_cells)
    return sums / counts[:, None]


def statistical_outlier_removal(
    cloud: np.ndarray, k_neighbors: int = 12, std_multiplier: float = 2.0
) -> np.ndarray:
    """Drop points whose mean k-NN distance exceeds mean + std_multiplier*std
    of that statistic over the cloud."""
    cloud = np.asarray(cloud, dtype=float)
    if len(cloud) <= k_neighbors:
        raise InsufficientPointsError(
            f"need more than {k_neighbors} points, got {len(cloud)}"
        )
    tree = cKDTree(cloud)
    dists, _ = tree.query(cloud, k=k_neighbors + 1)
    mean_knn = dists[:, 1:].mean(axis=1)
    cutoff = mean_knn.mean() + std_multiplier * mean_knn.std()
    return cloud[mean_knn <= cutoff]
