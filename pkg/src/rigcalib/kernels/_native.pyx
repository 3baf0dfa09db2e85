# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels (see _numpy.py for reference)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log, sqrt

cnp.import_array()

DEF EPS = 1e-12


def ray_triangle_hits(origin, dirs, triangles):
    """Nearest ray/triangle intersection distance per ray (inf on miss)."""
    cdef const double[::1] o = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, :, ::1] tri = np.ascontiguousarray(triangles, dtype=np.float64)
    out = np.full(d.shape[0], np.inf)
    cdef double[::1] best = out
    cdef Py_ssize_t n = d.shape[0], m = tri.shape[0], i, k
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, sx, sy, sz
    cdef double dx, dy, dz, px, py, pz, qx, qy, qz
    cdef double det, inv_det, u, v, t

    for k in range(m):
        e1x = tri[k, 1, 0] - tri[k, 0, 0]
        e1y = tri[k, 1, 1] - tri[k, 0, 1]
        e1z = tri[k, 1, 2] - tri[k, 0, 2]
        e2x = tri[k, 2, 0] - tri[k, 0, 0]
        e2y = tri[k, 2, 1] - tri[k, 0, 1]
        e2z = tri[k, 2, 2] - tri[k, 0, 2]
        sx = o[0] - tri[k, 0, 0]
        sy = o[1] - tri[k, 0, 1]
        sz = o[2] - tri[k, 0, 2]
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        for i in range(n):
            dx = d[i, 0]
            dy = d[i, 1]
            dz = d[i, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = px * e1x + py * e1y + pz * e1z
            if det > -EPS and det < EPS:
                continue
            inv_det = 1.0 / det
            u = (px * sx + py * sy + pz * sz) * inv_det
            if u < 0.0 or u > 1.0:
                continue
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if t > EPS and t < best[i]:
                best[i] = t
    return out


def gmm_responsibilities(points, means, variances, log_weights, double log_outlier):
    """Posterior responsibilities and total log-likelihood (see _numpy.py)."""
    cdef const double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[::1] var = np.ascontiguousarray(variances, dtype=np.float64)
    cdef const double[::1] logw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], j = mu.shape[0], i, k
    resp_arr = np.empty((n, j))
    cdef double[:, ::1] resp = resp_arr
    const_arr = np.asarray(log_weights) - 1.5 * np.log(2.0 * np.pi * np.asarray(variances))
    cdef double[::1] const = np.ascontiguousarray(const_arr)
    inv_arr = 0.5 / np.asarray(variances)
    cdef double[::1] inv_two_var = np.ascontiguousarray(inv_arr)
    cdef double loglik = 0.0, top, denom, d2, ex, ey, ez, lp

    for i in range(n):
        top = log_outlier
        for k in range(j):
            ex = x[i, 0] - mu[k, 0]
            ey = x[i, 1] - mu[k, 1]
            ez = x[i, 2] - mu[k, 2]
            d2 = ex * ex + ey * ey + ez * ez
            lp = const[k] - d2 * inv_two_var[k]
            resp[i, k] = lp
            if lp > top:
                top = lp
        denom = exp(log_outlier - top)
        for k in range(j):
            resp[i, k] = exp(resp[i, k] - top)
            denom += resp[i, k]
        for k in range(j):
            resp[i, k] /= denom
        loglik += log(denom) + top
    return resp_arr, loglik
