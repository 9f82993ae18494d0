"""Hot numeric kernels: bilinear resampling and total-variation sums.

Both kernels ship in two variants, a numba ``@njit`` build and a pure-numpy
fallback. The active backend is chosen at import time: set
``PATCHLAB_DISABLE_NUMBA=1`` to force the numpy path (it is also used
automatically when numba is not importable). ``benchmarks/bench_kernels.py``
compares the two.

The bilinear variants are elementwise-identical (same expression, same
operand order, float64 throughout). The TV variants may differ in the last
few ulps because numpy reduces pairwise while the jitted loop is sequential;
per-backend determinism is unaffected.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("PATCHLAB_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError("numba disabled by PATCHLAB_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def _bilinear_resize_numpy(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample (h, w, 3) float64 pixels to (out_h, out_w, 3)."""
    src_h, src_w = src.shape[0], src.shape[1]
    sy = src_h / out_h
    sx = src_w / out_w

    fy = (np.arange(out_h, dtype=np.float64) + 0.5) * sy - 0.5
    fx = (np.arange(out_w, dtype=np.float64) + 0.5) * sx - 0.5
    fy = np.minimum(np.maximum(fy, 0.0), src_h - 1.0)
    fx = np.minimum(np.maximum(fx, 0.0), src_w - 1.0)

    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (fy - y0)[:, None, None]
    wx = (fx - x0)[None, :, None]

    p00 = src[y0[:, None], x0[None, :]]
    p01 = src[y0[:, None], x1[None, :]]
    p10 = src[y1[:, None], x0[None, :]]
    p11 = src[y1[:, None], x1[None, :]]

    top = (1.0 - wx) * p00 + wx * p01
    bot = (1.0 - wx) * p10 + wx * p11
    return (1.0 - wy) * top + wy * bot


def _total_variation_sum_numpy(pix: np.ndarray) -> float:
    """Sum of |channel difference| over horizontally+vertically adjacent pixels."""
    h = float(np.sum(np.abs(pix[:, 1:, :] - pix[:, :-1, :])))
    v = float(np.sum(np.abs(pix[1:, :, :] - pix[:-1, :, :])))
    return h + v


if HAS_NUMBA:

    @njit(cache=True)
    def _bilinear_resize_numba(src, out_h, out_w):  # pragma: no cover - jitted
        src_h, src_w = src.shape[0], src.shape[1]
        sy = src_h / out_h
        sx = src_w / out_w
        out = np.empty((out_h, out_w, 3), dtype=np.float64)
        for i in range(out_h):
            fy = (i + 0.5) * sy - 0.5
            if fy < 0.0:
                fy = 0.0
            if fy > src_h - 1.0:
                fy = src_h - 1.0
            y0 = int(np.floor(fy))
            y1 = min(y0 + 1, src_h - 1)
            wy = fy - y0
            for j in range(out_w):
                fx = (j + 0.5) * sx - 0.5
                if fx < 0.0:
                    fx = 0.0
                if fx > src_w - 1.0:
                    fx = src_w - 1.0
                x0 = int(np.floor(fx))
                x1 = min(x0 + 1, src_w - 1)
                wx = fx - x0
                for c in range(3):
                    top = (1.0 - wx) * src[y0, x0, c] + wx * src[y0, x1, c]
                    bot = (1.0 - wx) * src[y1, x0, c] + wx * src[y1, x1, c]
                    out[i, j, c] = (1.0 - wy) * top + wy * bot
        return out

    @njit(cache=True)
    def _total_variation_sum_numba(pix):  # pragma: no cover - jitted
        h, w, _ = pix.shape
        acc = 0.0
        for i in range(h):
            for j in range(w - 1):
                for c in range(3):
                    acc += abs(pix[i, j + 1, c] - pix[i, j, c])
        for i in range(h - 1):
            for j in range(w):
                for c in range(3):
                    acc += abs(pix[i + 1, j, c] - pix[i, j, c])
        return acc

    BACKEND = "numba"

    def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        return _bilinear_resize_numba(np.ascontiguousarray(src), out_h, out_w)

    def total_variation_sum(pix: np.ndarray) -> float:
        return float(_total_variation_sum_numba(np.ascontiguousarray(pix)))

else:
    BACKEND = "numpy"

    bilinear_resize = _bilinear_resize_numpy
    total_variation_sum = _total_variation_sum_numpy
