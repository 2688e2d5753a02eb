"""Independent reference implementations used by the tests.

Everything here is written with explicit Python loops over pixels so that it
shares no code path with the vectorised package.
"""
import math

import numpy as np

from ccdenoise.image import Roi
from ccdenoise.losses import composite_loss
from ccdenoise.nn import backward, forward


def loop_stats(img, roi):
    vals = [img[i][j] for i in range(roi.top, roi.bottom) for j in range(roi.left, roi.right)]
    n = len(vals)
    mean = sum(vals) / n
    var = sum((v - mean) ** 2 for v in vals) / n
    return mean, math.sqrt(var)


def loop_cnr(img, fg, bg):
    mb, sb = loop_stats(img, bg)
    out = []
    for roi in fg:
        mf, sf = loop_stats(img, roi)
        out.append(abs(mf - mb) / math.sqrt(0.5 * (sf * sf + sb * sb)))
    return out


def loop_msr(img, fg):
    out = []
    for roi in fg:
        m, s = loop_stats(img, roi)
        out.append(m / s)
    return out


def loop_tp(den, noisy, rois):
    out = []
    for roi in rois:
        md, sd = loop_stats(den, roi)
        mn, sn = loop_stats(noisy, roi)
        out.append((sd * sd) / (sn * sn) * math.sqrt(md / mn))
    return out


def _loop_laplacian(img, roi):
    rows = []
    for i in range(roi.top + 1, roi.bottom - 1):
        row = []
        for j in range(roi.left + 1, roi.right - 1):
            row.append(img[i - 1][j] + img[i + 1][j] + img[i][j - 1] + img[i][j + 1] - 4 * img[i][j])
        rows.append(row)
    flat = [v for r in rows for v in r]
    mean = sum(flat) / len(flat)
    return [v - mean for v in flat]


def loop_ep(den, noisy, rois):
    out = []
    for roi in rois:
        a = _loop_laplacian(den, roi)
        b = _loop_laplacian(noisy, roi)
        num = sum(x * y for x, y in zip(a, b))
        out.append(num / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b)))
    return out


def random_roi(rng, shape, purpose, name, min_side=2):
    h, w = shape
    while True:
        top = int(rng.integers(0, h - min_side + 1))
        left = int(rng.integers(0, w - min_side + 1))
        bottom = int(rng.integers(top + min_side, h + 1))
        right = int(rng.integers(left + min_side, w + 1))
        if (bottom - top) * (right - left) >= 2:
            return Roi(name, purpose, top, left, bottom, right)


def finite_difference_check(params, images, targets, positions, labels, weights, h=1e-4):
    """Worst relative error between ``backward`` and central differences of the
    batch-mean composite loss, over every scalar parameter."""
    n = len(images)

    def objective(p):
        out = forward(p, images, "train")
        total, d_pred, d_logits = 0.0, [], []
        for i in range(n):
            j, dp, dl = composite_loss(out.denoised[i], targets[i], positions, out.logits[i],
                                       labels[i], weights)
            total += j / n
            d_pred.append(dp / n)
            d_logits.append(dl / n)
        return total, out, np.array(d_pred), np.array(d_logits)

    _, out, d_pred, d_logits = objective(params)
    grads = backward(params, out.cache, d_pred, d_logits)
    worst, where = 0.0, None
    for name, v in params.weights.items():
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            jp = objective(params)[0]
            v[idx] = old - h
            jm = objective(params)[0]
            v[idx] = old
            fd = (jp - jm) / (2 * h)
            a = grads[name][idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if rel > worst:
                worst, where = rel, (name, idx, a, fd)
    return worst, where
