"""Hot loops with a numba path and a pure-numpy path.

The backend is chosen once at import time.  Set ``CHECKERBOARD_NUMBA=0`` to
force the numpy path (also used automatically when numba is missing).  The
gather/scatter and stencil kernels accumulate in the same order on both paths
and agree bit for bit; the batch-norm reductions sum in a different order and
agree to rounding.  Each path on its own is deterministic.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        return decorator


def _env_wants_numba():
    flag = os.environ.get("CHECKERBOARD_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def im2col_numpy(xp, k, stride, dilation, out_h, out_w):
    n, _, _, c = xp.shape
    cols = np.empty((n, out_h, out_w, k, k, c), dtype=xp.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            cols[:, :, :, i, j, :] = xp[:, r0:r0 + h_span:stride, c0:c0 + w_span:stride, :]
    return cols


def col2im_numpy(dcols, padded_shape, stride, dilation):
    n, out_h, out_w, k, _, c = dcols.shape
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            dxp[:, r0:r0 + h_span:stride, c0:c0 + w_span:stride, :] += dcols[:, :, :, i, j, :]
    return dxp


def neighbor_fill_numpy(img, blind):
    """Replace ``blind`` pixels by the mean of their in-bounds 4-neighbours."""
    h, w = img.shape
    total = np.zeros_like(img)
    count = np.zeros_like(img)
    # up, down, left, right
    total[1:, :] += img[:-1, :]
    count[1:, :] += 1.0
    total[:-1, :] += img[1:, :]
    count[:-1, :] += 1.0
    total[:, 1:] += img[:, :-1]
    count[:, 1:] += 1.0
    total[:, :-1] += img[:, 1:]
    count[:, :-1] += 1.0
    out = img.copy()
    fill = blind & (count > 0)
    out[fill] = total[fill] / count[fill]
    return out


def bn_train_forward_numpy(x2, gamma, beta, eps):
    """Batch-statistics normalisation of ``(M, C)`` rows.  Returns y, xhat, mean, var."""
    mean = x2.mean(axis=0)
    var = x2.var(axis=0)
    xhat = (x2 - mean) * (1.0 / np.sqrt(var + eps))
    return gamma * xhat + beta, xhat, mean, var


def bn_train_backward_numpy(dy2, xhat, scale):
    """``scale`` is gamma / sqrt(var + eps).  Returns dx, dgamma, dbeta."""
    m = dy2.shape[0]
    dbeta = dy2.sum(axis=0)
    dgamma = (dy2 * xhat).sum(axis=0)
    dx = scale * (dy2 - dbeta / m - xhat * (dgamma / m))
    return dx, dgamma, dbeta


def laplacian_numpy(x):
    """5-point Laplacian over the valid interior (output shrinks by 2 per axis)."""
    return (x[:-2, 1:-1] + x[2:, 1:-1] + x[1:-1, :-2] + x[1:-1, 2:]) - 4.0 * x[1:-1, 1:-1]


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

@njit(cache=True)
def _im2col_jit(xp, k, stride, dilation, out_h, out_w):
    n, _, _, c = xp.shape
    cols = np.empty((n, out_h, out_w, k, k, c), dtype=xp.dtype)
    for b in range(n):
        for y in range(out_h):
            for x in range(out_w):
                for i in range(k):
                    r = y * stride + i * dilation
                    for j in range(k):
                        q = x * stride + j * dilation
                        for ch in range(c):
                            cols[b, y, x, i, j, ch] = xp[b, r, q, ch]
    return cols


@njit(cache=True)
def _col2im_jit(dcols, dxp, stride, dilation):
    # (i, j) outermost so every target cell sums its terms in the numpy order
    n, out_h, out_w, k, _, c = dcols.shape
    for i in range(k):
        for j in range(k):
            for b in range(n):
                for y in range(out_h):
                    r = y * stride + i * dilation
                    for x in range(out_w):
                        q = x * stride + j * dilation
                        for ch in range(c):
                            dxp[b, r, q, ch] += dcols[b, y, x, i, j, ch]
    return dxp


@njit(cache=True)
def _neighbor_fill_jit(img, blind):
    h, w = img.shape
    out = img.copy()
    for i in range(h):
        for j in range(w):
            if not blind[i, j]:
                continue
            total = 0.0
            count = 0.0
            if i > 0:
                total += img[i - 1, j]
                count += 1.0
            if i < h - 1:
                total += img[i + 1, j]
                count += 1.0
            if j > 0:
                total += img[i, j - 1]
                count += 1.0
            if j < w - 1:
                total += img[i, j + 1]
                count += 1.0
            if count > 0:
                out[i, j] = total / count
    return out


@njit(cache=True)
def _laplacian_jit(x):
    h, w = x.shape
    out = np.empty((h - 2, w - 2), dtype=x.dtype)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            s = ((x[i - 1, j] + x[i + 1, j]) + x[i, j - 1]) + x[i, j + 1]
            out[i - 1, j - 1] = s - 4.0 * x[i, j]
    return out


@njit(cache=True)
def _bn_train_forward_jit(x2, gamma, beta, eps):
    m, c = x2.shape
    mean = np.zeros(c)
    for r in range(m):
        for ch in range(c):
            mean[ch] += x2[r, ch]
    mean /= m
    var = np.zeros(c)
    for r in range(m):
        for ch in range(c):
            d = x2[r, ch] - mean[ch]
            var[ch] += d * d
    var /= m
    inv = 1.0 / np.sqrt(var + eps)
    xhat = np.empty_like(x2)
    y = np.empty_like(x2)
    for r in range(m):
        for ch in range(c):
            v = (x2[r, ch] - mean[ch]) * inv[ch]
            xhat[r, ch] = v
            y[r, ch] = gamma[ch] * v + beta[ch]
    return y, xhat, mean, var


@njit(cache=True)
def _bn_train_backward_jit(dy2, xhat, scale):
    m, c = dy2.shape
    dbeta = np.zeros(c)
    dgamma = np.zeros(c)
    for r in range(m):
        for ch in range(c):
            g = dy2[r, ch]
            dbeta[ch] += g
            dgamma[ch] += g * xhat[r, ch]
    mb = dbeta / m
    mg = dgamma / m
    dx = np.empty_like(dy2)
    for r in range(m):
        for ch in range(c):
            dx[r, ch] = scale[ch] * (dy2[r, ch] - mb[ch] - xhat[r, ch] * mg[ch])
    return dx, dgamma, dbeta


def bn_train_forward_numba(x2, gamma, beta, eps):
    return _bn_train_forward_jit(np.ascontiguousarray(x2), gamma, beta, eps)


def bn_train_backward_numba(dy2, xhat, scale):
    return _bn_train_backward_jit(np.ascontiguousarray(dy2), xhat, scale)


def im2col_numba(xp, k, stride, dilation, out_h, out_w):
    return _im2col_jit(np.ascontiguousarray(xp), k, stride, dilation, out_h, out_w)


def col2im_numba(dcols, padded_shape, stride, dilation):
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    return _col2im_jit(np.ascontiguousarray(dcols), dxp, stride, dilation)


def neighbor_fill_numba(img, blind):
    return _neighbor_fill_jit(np.ascontiguousarray(img), np.ascontiguousarray(blind))


def laplacian_numba(x):
    return _laplacian_jit(np.ascontiguousarray(x))


if USE_NUMBA:
    im2col, col2im = im2col_numba, col2im_numba
    neighbor_fill, laplacian = neighbor_fill_numba, laplacian_numba
    bn_train_forward, bn_train_backward = bn_train_forward_numba, bn_train_backward_numba
else:
    im2col, col2im = im2col_numpy, col2im_numpy
    neighbor_fill, laplacian = neighbor_fill_numpy, laplacian_numpy
    bn_train_forward, bn_train_backward = bn_train_forward_numpy, bn_train_backward_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
