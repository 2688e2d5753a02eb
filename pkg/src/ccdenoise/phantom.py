"""Synthetic OCT-like B-scan phantoms with multiplicative gamma speckle.

Randomness comes from numpy's ``PCG64`` bit generator seeded with an explicit
integer key, and gamma variates from ``Generator.standard_gamma``; both are
documented algorithms, so a given seed yields the same images on every
platform with the same numpy release.

Geometry (fractions of the image height ``H``)::

    [0, 0.22)     dark vitreous background
    0.22          thin bright line on top of the retina (ILM-like)
    [0.22, 0.78)  retina: ``num_layers`` bands, alternating dark/bright
    [0.78, 1)     choroid, medium intensity

Boundaries are smooth sinusoids (amplitude <= 0.015 H).  Class 0 is the plain
layer stack, class 1 adds bright blobs inside the second dark band, class 2
thins the second bright band and punches gaps into it.

The line between two dark regions is what the edge ROIs look at.  A plain
step into a bright band puts rows of strong speckle into the ROI that carry no
edge signal at all.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import DatasetManifest, Record, Roi, save_image, save_rois

RETINA_TOP = 0.22
RETINA_BOTTOM = 0.78
BACKGROUND_LEVEL = 0.06
CHOROID_LEVEL = 0.35
BRIGHT_LEVEL = 0.6
DARK_LEVEL = 0.1
LINE_LEVEL = 0.6
LINE_WIDTH = 1.5  # pixels
BLOB_LEVEL = 0.3
LEVEL_JITTER = 0.03
WOBBLE = 0.015
TEXTURE = 0.12


@dataclass(frozen=True)
class PhantomConfig:
    size: tuple = (64, 64)
    num_layers: int = 4
    class_label: int = 0
    speckle_looks: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "size", tuple(int(s) for s in self.size))
        h, w = self.size
        if h < 16 or w < 16:
            raise ValueError("phantom size must be at least 16x16")
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        if self.class_label not in (0, 1, 2):
            raise ValueError("class_label must be 0, 1 or 2")
        if not self.speckle_looks > 0:
            raise ValueError("speckle_looks must be positive")


def _boundaries(h, w, num_layers, rng):
    """Row position (float) of each of the ``num_layers + 1`` retina boundaries per column."""
    x = np.arange(w) / w
    nominal = np.linspace(RETINA_TOP * h, RETINA_BOTTOM * h, num_layers + 1)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 2 * np.pi)
    amp = rng.uniform(0.3, 1.0) * WOBBLE * h
    rows = []
    for b in nominal:
        local_phase = phase + rng.uniform(-0.4, 0.4)
        rows.append(b + amp * np.sin(2 * np.pi * freq * x + local_phase))
    return np.array(rows)


def layer_levels(num_layers):
    """Nominal intensity of each retina band (dark first)."""
    return [DARK_LEVEL if i % 2 == 0 else BRIGHT_LEVEL for i in range(num_layers)]


def generate_clean(config: PhantomConfig, rng) -> np.ndarray:
    h, w = config.size
    n = config.num_layers
    bounds = _boundaries(h, w, n, rng)
    # jitter is clamped so no band drops below the dark floor
    levels = [max(v + rng.uniform(-LEVEL_JITTER, LEVEL_JITTER), DARK_LEVEL) for v in layer_levels(n)]
    bg = BACKGROUND_LEVEL + rng.uniform(-0.015, 0.015)
    choroid = CHOROID_LEVEL + rng.uniform(-LEVEL_JITTER, LEVEL_JITTER)

    rows = np.arange(h)[:, None] + 0.5
    img = np.full((h, w), bg)
    img = np.where(rows >= bounds[-1][None, :], choroid, img)
    for i in range(n):
        inside = (rows >= bounds[i][None, :]) & (rows < bounds[i + 1][None, :])
        img = np.where(inside, levels[i], img)

    # the line's coverage of each pixel row, so sub-pixel positions blend smoothly
    top = bounds[0][None, :]
    r0 = np.arange(h)[:, None]
    cover = np.clip(np.minimum(r0 + 1, top + LINE_WIDTH) - np.maximum(r0, top), 0.0, 1.0)
    img = img * (1.0 - cover) + LINE_LEVEL * cover

    bright = [i for i in range(n) if i % 2 == 1]
    if config.class_label == 2 and len(bright) >= 2:
        # thin the second bright band to 40% of its width, then cut gaps into it
        k = bright[1]
        top, bot = bounds[k], bounds[k + 1]
        thin_bot = top + 0.4 * (bot - top)
        band = (rows >= top[None, :]) & (rows < bot[None, :])
        keep = rows < thin_bot[None, :]
        img = np.where(band & ~keep, levels[k - 1], img)
        cols = np.arange(w)
        for _ in range(2):
            c0 = rng.uniform(0.1, 0.8) * w
            gap = (cols >= c0) & (cols < c0 + 0.12 * w)
            img = np.where(band & gap[None, :], levels[k - 1], img)

    # smooth intra-layer texture
    tex = gaussian_filter(rng.standard_normal((h, w)), sigma=1.5, mode="reflect")
    tex /= max(tex.std(), 1e-12)
    retina = (rows >= bounds[0][None, :]) & (rows < bounds[-1][None, :])
    img = img * np.where(retina | (rows >= bounds[-1][None, :]), 1.0 + TEXTURE * tex, 1.0)

    if config.class_label == 1:
        # bright blobs centred in the second dark band, clear of the edge ROIs
        k = 2 if n >= 3 else 0
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        sigma = 0.04 * h
        for _ in range(3):
            cx = rng.uniform(0.1, 0.9) * w
            col = int(min(max(cx, 0), w - 1))
            cy = 0.5 * (bounds[k][col] + bounds[k + 1][col])
            img = img + BLOB_LEVEL * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    return np.clip(img, 0.0, 1.0)


def generate(config: PhantomConfig):
    """Return ``(clean, noisy, label)``; deterministic in ``config``."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    clean = generate_clean(config, rng)
    looks = float(config.speckle_looks)
    speckle = rng.standard_gamma(looks, size=clean.shape) / looks
    noisy = np.clip(clean * speckle, 0.0, 1.0)
    return clean, noisy, config.class_label


def phantom_seed(base_seed: int, label: int, index: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), int(label), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def phantom_rois(size=(64, 64), num_layers: int = 4) -> list[Roi]:
    """Fixed ROI set for phantoms of this geometry."""
    h, w = size
    left, right = round(0.1 * w), round(0.9 * w)
    bounds = np.linspace(RETINA_TOP * h, RETINA_BOTTOM * h, num_layers + 1)
    margin = WOBBLE * h + 1

    def band(i, name, purpose):
        top = int(np.ceil(bounds[i] + margin))
        bot = int(np.floor(bounds[i + 1] - margin))
        if bot - top < 1:
            c = int(round(0.5 * (bounds[i] + bounds[i + 1])))
            top, bot = c, c + 1
        return Roi(name, purpose, top, left, bot, right)

    rois = [Roi("vitreous", "background", round(0.03 * h), left, round(0.17 * h), right),
            band(0, "layer0", "foreground"),
            band(1, "layer1", "foreground")]
    # texture: whole retina, left and right halves
    t0, t1 = int(round(bounds[0])), int(round(bounds[-1]))
    mid = w // 2
    rois.append(Roi("retina_left", "texture", t0, left, t1, mid))
    rois.append(Roi("retina_right", "texture", t0, mid, t1, right))
    # edges: thin strips around the bright line on top of the retina, just
    # tall enough to hold it through its wobble
    reach = int(np.ceil(WOBBLE * h))
    edge = int(round(bounds[0]))
    top, bot = edge - reach - 1, edge + int(np.ceil(LINE_WIDTH)) + reach + 1
    rois.append(Roi("inner_edge_left", "edge", top, left, bot, mid))
    rois.append(Roi("inner_edge_right", "edge", top, mid, bot, right))
    return rois


def generate_manifest(n_per_class: int, base_config: PhantomConfig, out_dir,
                      fmt: str = "pgm") -> DatasetManifest:
    """Write ``3 * n_per_class`` phantoms under ``out_dir``.

    Layout: ``noisy/<name>``, ``clean/<name>``, ``manifest.json`` (noisy
    images, paths relative to ``out_dir``) and ``rois.json``.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out = Path(out_dir)
    (out / "noisy").mkdir(parents=True, exist_ok=True)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    records = []
    for label in (0, 1, 2):
        for index in range(n_per_class):
            cfg = PhantomConfig(base_config.size, base_config.num_layers, label,
                                base_config.speckle_looks,
                                phantom_seed(base_config.seed, label, index))
            clean, noisy, _ = generate(cfg)
            name = f"c{label}_{index:04d}.{fmt}"
            save_image(noisy, out / "noisy" / name)
            save_image(clean, out / "clean" / name)
            records.append(Record(f"noisy/{name}", label, f"c{label}_{index:04d}"))
    manifest = DatasetManifest(records, root=out)
    manifest.save(out / "manifest.json")
    save_rois(phantom_rois(base_config.size, base_config.num_layers), out / "rois.json")
    return manifest
