"""Hot inner kernels with a numba path and a pure-numpy fallback.

Set ``LCSPARSE_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths give identical results: equal magnitudes resolve to the lower
index and exact zeros are never selected.
"""
import os

import numpy as np

_DISABLED = os.environ.get("LCSPARSE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by LCSPARSE_DISABLE_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def topk_mask_numpy(V, T):
    """Boolean mask of the ``T`` largest-magnitude nonzero entries per column."""
    A = np.abs(V)
    order = np.argsort(-A, axis=0, kind="stable")[:T]
    mask = np.zeros(V.shape, dtype=np.bool_)
    np.put_along_axis(mask, order, True, axis=0)
    mask &= A > 0.0
    return mask


def soft_threshold_numpy(X, t):
    return np.where(X > t, X - t, np.where(X < -t, X + t, 0.0))


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _topk_mask_jit(V, T):
        # partition for the T-th magnitude, then break ties by index
        K, N = V.shape
        mask = np.zeros((K, N), dtype=np.bool_)
        a = np.empty(K)
        for j in range(N):
            for i in range(K):
                a[i] = abs(V[i, j])
            thr = np.partition(a, K - T)[K - T]
            above = 0
            for i in range(K):
                if a[i] > thr:
                    mask[i, j] = True
                    above += 1
            if thr > 0.0:
                for i in range(K):
                    if above >= T:
                        break
                    if a[i] == thr:
                        mask[i, j] = True
                        above += 1
        return mask

    @njit(cache=True, nogil=True)
    def _soft_threshold_jit(x, t):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            if v > t:
                out[i] = v - t
            elif v < -t:
                out[i] = v + t
            else:
                out[i] = 0.0
        return out

    def topk_mask(V, T):
        return _topk_mask_jit(np.ascontiguousarray(V, dtype=np.float64), int(T))

    def soft_threshold(X, t):
        X = np.asarray(X, dtype=np.float64)
        flat = np.ascontiguousarray(X).reshape(-1)
        return _soft_threshold_jit(flat, float(t)).reshape(X.shape)

else:
    topk_mask = topk_mask_numpy
    soft_threshold = soft_threshold_numpy
