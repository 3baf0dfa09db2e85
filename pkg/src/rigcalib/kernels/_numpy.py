"""Pure-numpy implementations of the hot kernels."""

from __future__ import annotations

import numpy as np

_EPS = 1e-12
_CHUNK = 65536


def ray_triangle_hits(origin: np.ndarray, dirs: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Nearest ray/triangle intersection distance per ray (inf on miss).

    Moeller-Trumbore over a small triangle set, vectorized across rays.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = np.asarray(dirs, dtype=float)
    best = np.full(len(dirs), np.inf)
    for tri in np.asarray(triangles, dtype=float):
        v0, v1, v2 = tri
        e1 = v1 - v0
        e2 = v2 - v0
        p = np.cross(dirs, e2)
        det = p @ e1
        ok = np.abs(det) > _EPS
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = origin - v0
        u = (p @ s) * inv_det
        ok &= (u >= 0.0) & (u <= 1.0)
        q = np.cross(s, e1)
        v = (dirs @ q) * inv_det
        ok &= (v >= 0.0) & (u + v <= 1.0)
        t = (e2 @ q) * inv_det
        ok &= t > _EPS
        np.minimum(best, np.where(ok, t, np.inf), out=best)
    return best


def gmm_responsibilities(
    points: np.ndarray,
    means: np.ndarray,
    variances: np.ndarray,
    log_weights: np.ndarray,
    log_outlier: float,
) -> tuple[np.ndarray, float]:
    """Posterior component responsibilities under an isotropic mixture.

    Returns the (n_points, n_components) responsibility matrix (rows sum to
    at most 1; the remainder belongs to the uniform outlier class) and the
    total log-likelihood including the outlier term.
    """
    points = np.asarray(points, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)

    const = log_weights - 1.5 * np.log(2.0 * np.pi * variances)
    inv_two_var = 0.5 / variances
    mean_sq = np.einsum("jk,jk->j", means, means)

    resp = np.empty((len(points), len(means)))
    loglik = 0.0
    for start in range(0, len(points), _CHUNK):
        block = points[start : start + _CHUNK]
        d2 = np.einsum("ik,ik->i", block, block)[:, None] - 2.0 * block @ means.T + mean_sq
        np.maximum(d2, 0.0, out=d2)
        logp = const - d2 * inv_two_var
        top = np.maximum(logp.max(axis=1), log_outlier)
        w = np.exp(logp - top[:, None])
        denom = w.sum(axis=1) + np.exp(log_outlier - top)
        resp[start : start + _CHUNK] = w / denom[:, None]
        loglik += float(np.sum(np.log(denom) + top))
    return resp, loglik
