# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Signatures mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def loglik_batch(const double[:, :, ::1] R, const double[:, ::1] t, const double[:, ::1] arc,
                 const double[:, ::1] cams, const double[:, ::1] det_uv, const int[::1] det_cam,
                 double inv_two_sigma2, double floor_val, double outlier_w, double outlier_c):
    cdef Py_ssize_t n = R.shape[0], m = arc.shape[0], C = cams.shape[0], K = det_uv.shape[0]
    cdef Py_ssize_t i, j, c, k
    cdef double[::1] ll = np.zeros(n)
    cdef cnp.uint8_t[::1] floored = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] proj = np.empty((m, 2))
    cdef double px, py, pz, qx, qy, qz, d2, best, term, total
    cdef double fx, fy, cx, cy
    cdef int nvis, nfloor
    cdef double lw = log(1.0 - outlier_w) if outlier_w < 1.0 else -INFINITY
    cdef double lc = log(outlier_w * outlier_c) if outlier_w > 0.0 else -INFINITY

    with nogil:
        for i in range(n):
            total = 0.0
            nfloor = 0
            for c in range(C):
                fx = cams[c, 0]; fy = cams[c, 1]; cx = cams[c, 2]; cy = cams[c, 3]
                nvis = 0
                for j in range(m):
                    # needle frame -> rig frame
                    px = R[i, 0, 0] * arc[j, 0] + R[i, 0, 1] * arc[j, 1] + R[i, 0, 2] * arc[j, 2] + t[i, 0]
                    py = R[i, 1, 0] * arc[j, 0] + R[i, 1, 1] * arc[j, 1] + R[i, 1, 2] * arc[j, 2] + t[i, 1]
                    pz = R[i, 2, 0] * arc[j, 0] + R[i, 2, 1] * arc[j, 1] + R[i, 2, 2] * arc[j, 2] + t[i, 2]
                    px = px - cams[c, 13]; py = py - cams[c, 14]; pz = pz - cams[c, 15]
                    # rig frame -> camera frame (cams[c, 4:13] holds R^T row-major)
                    qx = cams[c, 4] * px + cams[c, 5] * py + cams[c, 6] * pz
                    qy = cams[c, 7] * px + cams[c, 8] * py + cams[c, 9] * pz
                    qz = cams[c, 10] * px + cams[c, 11] * py + cams[c, 12] * pz
                    if qz > 1e-6:
                        proj[nvis, 0] = fx * qx / qz + cx
                        proj[nvis, 1] = fy * qy / qz + cy
                        nvis = nvis + 1
                for k in range(K):
                    if det_cam[k] != c:
                        continue
                    if nvis == 0:
                        total = total - floor_val
                        nfloor = nfloor + 1
                        continue
                    best = INFINITY
                    for j in range(nvis):
                        px = proj[j, 0] - det_uv[k, 0]
                        py = proj[j, 1] - det_uv[k, 1]
                        d2 = px * px + py * py
                        if d2 < best:
                            best = d2
                    term = -best * inv_two_sigma2
                    if outlier_w > 0.0:
                        if term + lw > lc:
                            term = term + lw + log(1.0 + exp(lc - term - lw))
                        else:
                            term = lc + log(1.0 + exp(term + lw - lc))
                    total = total + term
            ll[i] = total
            if K > 0 and nfloor == K:
                floored[i] = 1
    return np.asarray(ll), np.asarray(floored).astype(bool)


def hf_transition(const double[:, ::1] S, const double[::1] var, double cutoff2):
    cdef Py_ssize_t n = S.shape[0], D = S.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double[:, ::1] T = np.zeros((n, n))
    cdef double m2, diff, rowsum
    cdef bint skip
    with nogil:
        for i in range(n):
            rowsum = 0.0
            for j in range(n):
                m2 = 0.0
                skip = False
                for k in range(D):
                    diff = S[j, k] - S[i, k]
                    if var[k] == 0.0:
                        if diff != 0.0:
                            skip = True
                            break
                    else:
                        m2 = m2 + diff * diff / var[k]
                        if m2 > cutoff2:
                            skip = True
                            break
                if not skip:
                    T[i, j] = exp(-0.5 * m2)
                    rowsum = rowsum + T[i, j]
            for j in range(n):
                T[i, j] = T[i, j] / rowsum
    return np.asarray(T)


def stratified_indices(const double[::1] cumsum, const double[::1] positions):
    cdef Py_ssize_t n = positions.shape[0], N = cumsum.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef cnp.intp_t[::1] idx = np.empty(n, dtype=np.intp)
    with nogil:
        while i < n:
            if positions[i] < cumsum[j] or j == N - 1:
                idx[i] = j
                i = i + 1
            else:
                j = j + 1
    return np.asarray(idx)
