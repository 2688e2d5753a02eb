"""Layer primitives with hand-written backward passes.

Feature maps are ``(N, H, W, C)`` arrays.  Every ``*_forward`` returns
``(out, cache)`` and the matching ``*_backward(dout, cache)`` returns the
input gradient followed by parameter gradients.  Convolution weights are
stored as ``(k, k, C_in, C_out)``.
"""
import numpy as np
from scipy.linalg.blas import dgemm

from .. import _accel

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _acc_gemm(a, b_t, c_t):
    """``c_t += a @ b_t`` in place; all operands Fortran-ordered views."""
    if c_t.shape[1] == 0:
        return
    out = dgemm(1.0, a, b_t, beta=1.0, c=c_t, overwrite_c=1)
    if not np.shares_memory(out, c_t):  # pragma: no cover - BLAS copied c
        c_t[...] = out


def conv2d_forward(x, w, b=None, stride=1, dilation=1):
    """'Same'-padded 2-D convolution (output size ceil(H / stride)).

    Stride-1 kernels use the flat-shift form: on the padded image flattened to
    ``(N*Hp*Wp, C)`` rows, tap ``(i, j)`` is the contiguous row window starting
    at ``i*d*Wp + j*d``, so each tap is one in-place GEMM.  Rows that wrap
    across image borders land outside the cropped output.
    """
    k = w.shape[0]
    cin, cout = w.shape[2], w.shape[3]
    if x.ndim != 4 or x.shape[3] != cin:
        raise ValueError(f"conv expects (N, H, W, {cin}) input, got {x.shape}")
    n, h, wd, _ = x.shape
    if k == 1 and stride == 1:
        y = x.reshape(-1, cin) @ w.reshape(cin, cout)
        if b is not None:
            y += b
        return y.reshape(n, h, wd, cout), ("1x1", x)
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    if stride == 1:
        hp, wp = xp.shape[1], xp.shape[2]
        flat = xp.reshape(-1, cin)
        rows = flat.shape[0] - (k - 1) * dilation * (wp + 1)
        yf = np.zeros((flat.shape[0], cout))
        yt = yf[:rows].T
        for i in range(k):
            for j in range(k):
                off = (i * wp + j) * dilation
                _acc_gemm(w[i, j].T, flat[off:off + rows].T, yt)
        y = yf.reshape(n, hp, wp, cout)[:, :h, :wd]
        if b is not None:
            y = y + b
        return np.ascontiguousarray(y), ("flat", flat, xp.shape, x.shape, k, dilation, rows)
    out_h = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out_w = (wd + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    cols = _accel.im2col(xp, k, stride, dilation, out_h, out_w)
    y = cols.reshape(-1, k * k * cin) @ w.reshape(k * k * cin, cout)
    if b is not None:
        y += b
    return y.reshape(n, out_h, out_w, cout), ("cols", cols, xp.shape, x.shape, k, stride, dilation)


def conv2d_backward(dy, cache, w):
    """Returns ``(dx, dw, db)``."""
    kind = cache[0]
    cin, cout = w.shape[2], w.shape[3]
    db = dy.sum(axis=(0, 1, 2))
    if kind == "1x1":
        x = cache[1]
        dy2 = dy.reshape(-1, cout)
        dw = (x.reshape(-1, cin).T @ dy2).reshape(w.shape)
        dx = (dy2 @ w.reshape(cin, cout).T).reshape(x.shape)
        return dx, dw, db
    if kind == "flat":
        _, flat, padded_shape, x_shape, k, dilation, rows = cache
        n, hp, wp, _ = padded_shape
        h, wd = x_shape[1], x_shape[2]
        dyf = np.zeros((n, hp, wp, cout))
        dyf[:, :h, :wd] = dy
        dyr = dyf.reshape(-1, cout)[:rows]
        dflat = np.zeros_like(flat)
        dw = np.empty_like(w)
        for i in range(k):
            for j in range(k):
                off = (i * wp + j) * dilation
                dw[i, j] = flat[off:off + rows].T @ dyr
                _acc_gemm(w[i, j], dyr.T, dflat[off:off + rows].T)
        pad = dilation * (k - 1) // 2
        dx = dflat.reshape(padded_shape)[:, pad:pad + h, pad:pad + wd]
        return np.ascontiguousarray(dx), dw, db
    _, cols, padded_shape, x_shape, k, stride, dilation = cache
    dy2 = dy.reshape(-1, cout)
    wmat = w.reshape(k * k * cin, cout)
    dw = (cols.reshape(-1, k * k * cin).T @ dy2).reshape(w.shape)
    dcols = (dy2 @ wmat.T).reshape(cols.shape)
    dxp = _accel.col2im(dcols, padded_shape, stride, dilation)
    pad = dilation * (k - 1) // 2
    dx = dxp[:, pad:pad + x_shape[1], pad:pad + x_shape[2], :]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Returns ``(y, cache, (new_running_mean, new_running_var))``."""
    c = x.shape[-1]
    x2 = x.reshape(-1, c)
    if train:
        y, xhat, mean, var = _accel.bn_train_forward(x2, gamma, beta, BN_EPS)
        new_stats = ((1.0 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean,
                     (1.0 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        return y.reshape(x.shape), (xhat, inv_std, gamma), new_stats
    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    y = (x - running_mean) * (gamma * inv_std) + beta
    return y, None, (running_mean, running_var)


def batchnorm_backward(dy, cache):
    """Backward for train-mode (batch-statistics) normalisation."""
    xhat, inv_std, gamma = cache
    c = dy.shape[-1]
    dx, dgamma, dbeta = _accel.bn_train_backward(dy.reshape(-1, c), xhat, gamma * inv_std)
    return dx.reshape(dy.shape), dgamma, dbeta


# ---------------------------------------------------------------------------
# squeeze-and-excitation
# ---------------------------------------------------------------------------

def se_forward(x, w1, w2):
    """Channel recalibration ``x * sigmoid(W2 relu(W1 z))`` with ``z`` the channel means."""
    if w1.shape[0] != x.shape[3] or w2.shape[1] != x.shape[3]:
        raise ValueError("SE weight shapes do not match channel count")
    z = x.mean(axis=(1, 2))
    h = z @ w1
    a = relu(h)
    s = sigmoid(a @ w2)
    return x * s[:, None, None, :], (x, z, h, a, s, w1, w2)


def se_backward(dy, cache):
    x, z, h, a, s, w1, w2 = cache
    hw = x.shape[1] * x.shape[2]
    ds = (dy * x).sum(axis=(1, 2))
    dt = ds * s * (1.0 - s)
    dw2 = a.T @ dt
    dh = (dt @ w2.T) * (h > 0)
    dw1 = z.T @ dh
    dz = dh @ w1.T
    dx = dy * s[:, None, None, :] + dz[:, None, None, :] / hw
    return dx, dw1, dw2


# ---------------------------------------------------------------------------
# attention gate
# ---------------------------------------------------------------------------

def attention_forward(f, w1, w2, b1, b2):
    """Elementwise gate ``A * f`` with ``A = sigmoid(W2 tanh(W1 f + b1) + b2)`` (1x1 maps)."""
    c = f.shape[3]
    if w1.shape[0] != c or w2.shape[1] != c:
        raise ValueError("attention weight shapes do not match channel count")
    f2 = f.reshape(-1, c)
    t = np.tanh(f2 @ w1 + b1)
    a = sigmoid(t @ w2 + b2)
    return (a * f2).reshape(f.shape), (f2, t, a, w1, w2, f.shape)


def attention_backward(dy, cache):
    f2, t, a, w1, w2, shape = cache
    dy2 = dy.reshape(f2.shape)
    dg = dy2 * f2 * a * (1.0 - a)
    dw2 = t.T @ dg
    db2 = dg.sum(axis=0)
    dh = (dg @ w2.T) * (1.0 - t * t)
    dw1 = f2.T @ dh
    db1 = dh.sum(axis=0)
    df = dy2 * a + dh @ w1.T
    return df.reshape(shape), dw1, dw2, db1, db2


# ---------------------------------------------------------------------------
# ASPP
# ---------------------------------------------------------------------------

def aspp_forward(x, branch_w, branch_b, proj_w, proj_b, rates):
    """Sum of dilated 3x3 branches followed by a 1x1 projection."""
    if len(branch_w) != len(rates):
        raise ValueError("one branch weight per dilation rate required")
    total = None
    caches = []
    for w, b, r in zip(branch_w, branch_b, rates):
        y, c = conv2d_forward(x, w, b, dilation=r)
        caches.append(c)
        total = y if total is None else total + y
    out, pc = conv2d_forward(total, proj_w, proj_b)
    return out, (caches, pc, branch_w, proj_w)


def aspp_backward(dy, cache):
    caches, pc, branch_w, proj_w = cache
    dsum, dpw, dpb = conv2d_backward(dy, pc, proj_w)
    dx = None
    dws, dbs = [], []
    for w, c in zip(branch_w, caches):
        dxi, dw, db = conv2d_backward(dsum, c, w)
        dx = dxi if dx is None else dx + dxi
        dws.append(dw)
        dbs.append(db)
    return dx, dws, dbs, dpw, dpb


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def upsample2x_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2x_backward(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
