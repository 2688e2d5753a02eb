"""Denoising quality indices over rectangular ROIs.

All standard deviations are population (divide-by-n) values.

* CNR  = |mu_f - mu_b| / sqrt(0.5 (sigma_f^2 + sigma_b^2)), reported linear and
  as ``10 log10`` dB.
* MSR  = mu_f / sigma_f.
* TP   = (sigma_den^2 / sigma_noisy^2) * sqrt(mu_den / mu_noisy).
* EP   = Pearson correlation of the mean-subtracted 5-point Laplacians of the
  denoised and noisy ROI (valid interior only).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .image import Roi, check_image


class MetricError(ValueError):
    pass


def _region(img, roi: Roi):
    roi.check_bounds(img.shape)
    return img[roi.top:roi.bottom, roi.left:roi.right]


def region_stats(img, roi: Roi):
    """Mean and population standard deviation inside ``roi``."""
    arr = check_image(img)
    if roi.area < 2:
        raise MetricError(f"ROI {roi.name!r}: area < 2")
    r = _region(arr, roi)
    mean = float(r.mean())
    return mean, float(np.sqrt(np.mean((r - mean) ** 2)))


def _summary(values):
    vals = np.asarray(values, dtype=np.float64)
    return float(vals.mean()), float(vals.std())


def _of_purpose(rois, purpose):
    return [r for r in rois if r.purpose == purpose]


def cnr(img, fg_rois, bg_roi: Roi):
    """Per-foreground ``(linear, dB)`` pairs and ``(mean, std)`` of each across ROIs."""
    if not fg_rois:
        raise MetricError("CNR needs at least one foreground ROI")
    mu_b, sd_b = region_stats(img, bg_roi)
    per = []
    for roi in fg_rois:
        mu_f, sd_f = region_stats(img, roi)
        denom = math.sqrt(0.5 * (sd_f * sd_f + sd_b * sd_b))
        if denom == 0.0:
            raise MetricError(f"ROI {roi.name!r}: zero standard deviation in foreground and background")
        ratio = abs(mu_f - mu_b) / denom
        if ratio == 0.0:
            raise MetricError(f"ROI {roi.name!r}: zero contrast")
        per.append((ratio, 10.0 * math.log10(ratio)))
    lin = _summary([p[0] for p in per])
    db = _summary([p[1] for p in per])
    return per, lin, db


def msr(img, fg_rois):
    if not fg_rois:
        raise MetricError("MSR needs at least one foreground ROI")
    per = []
    for roi in fg_rois:
        mu, sd = region_stats(img, roi)
        if sd == 0.0:
            raise MetricError(f"ROI {roi.name!r}: zero standard deviation")
        per.append(mu / sd)
    return per, _summary(per)


def tp(denoised, noisy, texture_rois):
    den = check_image(denoised)
    noi = check_image(noisy)
    if den.shape != noi.shape:
        raise MetricError(f"shape mismatch: {den.shape} vs {noi.shape}")
    if not texture_rois:
        raise MetricError("TP needs at least one texture ROI")
    per = []
    for roi in texture_rois:
        mu_d, sd_d = region_stats(den, roi)
        mu_n, sd_n = region_stats(noi, roi)
        if sd_n == 0.0:
            raise MetricError(f"ROI {roi.name!r}: zero noisy variance")
        if mu_n <= 0.0:
            raise MetricError(f"ROI {roi.name!r}: non-positive noisy mean")
        if mu_d < 0.0:
            raise MetricError(f"ROI {roi.name!r}: negative denoised mean")
        per.append((sd_d * sd_d) / (sd_n * sd_n) * math.sqrt(mu_d / mu_n))
    return per, _summary(per)


def _centred_laplacian(region):
    lap = _accel.laplacian(np.ascontiguousarray(region))
    return lap - lap.mean()


def ep(denoised, noisy, edge_rois):
    den = check_image(denoised)
    noi = check_image(noisy)
    if den.shape != noi.shape:
        raise MetricError(f"shape mismatch: {den.shape} vs {noi.shape}")
    if not edge_rois:
        raise MetricError("EP needs at least one edge ROI")
    per = []
    for roi in edge_rois:
        if roi.shape[0] < 3 or roi.shape[1] < 3:
            raise MetricError(f"ROI {roi.name!r}: edge ROI must be at least 3x3")
        a = _centred_laplacian(_region(den, roi))
        b = _centred_laplacian(_region(noi, roi))
        saa = float(np.sum(a * a))
        sbb = float(np.sum(b * b))
        if saa == 0.0 or sbb == 0.0:
            raise MetricError(f"ROI {roi.name!r}: constant Laplacian")
        r = float(np.sum(a * b)) / math.sqrt(saa * sbb)
        per.append(min(1.0, max(-1.0, r)))
    return per, _summary(per)


@dataclass
class MetricReport:
    name: str
    cnr_linear: float
    cnr_db: float
    msr: float
    tp: float
    ep: float
    per_roi: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate_image(denoised, noisy, rois, name="") -> MetricReport:
    """All four indices for one image pair.

    CNR and MSR are computed on ``denoised``; the ``cnr_db`` field is
    ``10 log10`` of the reported ``cnr_linear`` (the mean ratio across
    foreground ROIs).
    """
    fg = _of_purpose(rois, "foreground")
    bg = _of_purpose(rois, "background")
    if len(bg) != 1:
        raise MetricError(f"CNR needs exactly one background ROI, got {len(bg)}")
    per_c, (c_lin, _), _ = cnr(denoised, fg, bg[0])
    per_m, (m_mean, _) = msr(denoised, fg)
    per_t, (t_mean, _) = tp(denoised, noisy, _of_purpose(rois, "texture"))
    per_e, (e_mean, _) = ep(denoised, noisy, _of_purpose(rois, "edge"))
    per_roi = {
        "cnr": {r.name: {"linear": v[0], "db": v[1]} for r, v in zip(fg, per_c)},
        "msr": {r.name: v for r, v in zip(fg, per_m)},
        "tp": {r.name: v for r, v in zip(_of_purpose(rois, "texture"), per_t)},
        "ep": {r.name: v for r, v in zip(_of_purpose(rois, "edge"), per_e)},
    }
    return MetricReport(name, c_lin, 10.0 * math.log10(c_lin), m_mean, t_mean, e_mean, per_roi)


def psnr(img, reference, peak: float = 1.0) -> float:
    a = check_image(img)
    b = check_image(reference)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def aggregate(reports, method="") -> dict:
    """Mean and population std of every headline field across ``reports``."""
    out = {"method": method, "n": len(reports)}
    for key in ("cnr_linear", "cnr_db", "msr", "tp", "ep"):
        vals = [getattr(r, key) for r in reports]
        out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    # the dB column of a summary table is the dB of the mean linear ratio
    out["cnr_db_of_mean"] = 10.0 * math.log10(out["cnr_linear"]["mean"])
    extra_keys = sorted({k for r in reports for k in r.extra})
    for key in extra_keys:
        vals = [r.extra[key] for r in reports if key in r.extra]
        out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def format_table(summaries) -> str:
    """Plain-text table with columns method, CNR, CNR(dB), MSR, TP, EP."""
    header = ["method", "CNR", "CNR(dB)", "MSR", "TP", "EP"]
    rows = [header]
    for s in summaries:
        rows.append([
            str(s["method"]),
            f"{s['cnr_linear']['mean']:.4f} ± {s['cnr_linear']['std']:.2f}",
            f"{s['cnr_db_of_mean']:.2f}",
            f"{s['msr']['mean']:.2f} ± {s['msr']['std']:.2f}",
            f"{s['tp']['mean']:.2f} ± {s['tp']['std']:.2f}",
            f"{s['ep']['mean']:.2f} ± {s['ep']['std']:.2f}",
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
