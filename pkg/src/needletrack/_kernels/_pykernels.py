"""Pure-numpy versions of the compiled kernels."""
import numpy as np

_CHUNK = 512


def loglik_batch(R, t, arc, cams, det_uv, det_cam, inv_two_sigma2, floor_val, outlier_w, outlier_c):
    n = R.shape[0]
    K = det_uv.shape[0]
    ll = np.zeros(n)
    nfloor = np.zeros(n, dtype=int)
    if K == 0:
        return ll, np.zeros(n, dtype=bool)
    lw = np.log1p(-outlier_w) if outlier_w < 1.0 else -np.inf
    lc = np.log(outlier_w * outlier_c) if outlier_w > 0.0 else -np.inf
    for s in range(0, n, _CHUNK):
        Rc, tc = R[s:s + _CHUNK], t[s:s + _CHUNK]
        pts = np.einsum("nij,mj->nmi", Rc, arc) + tc[:, None, :]
        for c in range(cams.shape[0]):
            sel = det_cam == c
            if not np.any(sel):
                continue
            fx, fy, cx, cy = cams[c, :4]
            Rt = cams[c, 4:13].reshape(3, 3)
            q = (pts - cams[c, 13:16]) @ Rt.T
            vis = q[..., 2] > 1e-6
            z = np.where(vis, q[..., 2], 1.0)
            uv = np.stack([fx * q[..., 0] / z + cx, fy * q[..., 1] / z + cy], axis=-1)
            d2 = np.sum((uv[:, :, None, :] - det_uv[sel][None, None]) ** 2, axis=-1)
            d2 = np.where(vis[:, :, None], d2, np.inf)
            best = d2.min(axis=1)
            term = -best * inv_two_sigma2
            if outlier_w > 0.0:
                term = np.logaddexp(term + lw, lc)
            none = ~vis.any(axis=1)
            term = np.where(none[:, None], -floor_val, term)
            ll[s:s + _CHUNK] += term.sum(axis=1)
            nfloor[s:s + _CHUNK] += none * int(sel.sum())
    return ll, nfloor == K


def hf_transition(S, var, cutoff2):
    n = S.shape[0]
    T = np.zeros((n, n))
    zero = var == 0.0
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, var))
    for s in range(0, n, _CHUNK):
        diff = S[None, :, :] - S[s:s + _CHUNK, None, :]
        m2 = np.sum(diff * diff * inv, axis=-1)
        ok = m2 <= cutoff2
        if np.any(zero):
            ok &= np.all(diff[..., zero] == 0.0, axis=-1)
        T[s:s + _CHUNK] = np.where(ok, np.exp(-0.5 * m2), 0.0)
    return T / T.sum(axis=1, keepdims=True)


def stratified_indices(cumsum, positions):
    idx = np.searchsorted(cumsum, positions, side="right")
    return np.minimum(idx, len(cumsum) - 1)
