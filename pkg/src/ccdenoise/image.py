"""Grayscale images, ROIs, dataset manifests and their on-disk formats.

An image is a 2-D ``float64`` numpy array (rows x cols) with finite values.
Two file formats are supported:

* binary PGM (``P5``, maxval 255), intensities scaled by 1/255;
* raw little-endian float32 (``.raw`` / ``.f32``) with a JSON sidecar
  ``<file>.json`` holding ``{"height": H, "width": W}``.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

PURPOSES = ("foreground", "background", "texture", "edge")
RAW_SUFFIXES = (".raw", ".f32")
PGM_SUFFIXES = (".pgm",)
IMAGE_SUFFIXES = PGM_SUFFIXES + RAW_SUFFIXES


class ImageFormatError(ValueError):
    pass


def check_image(img, *, unit_range=False) -> np.ndarray:
    """Validate and return ``img`` as a 2-D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite intensity")
    if unit_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("intensity outside [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval separated by whitespace/comments
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM (maxval 255) is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).astype(np.float64) / 255.0


def _read_raw(path: Path) -> np.ndarray:
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ImageFormatError(f"{path}: missing sidecar {sidecar.name}")
    meta = json.loads(sidecar.read_text())
    h, w = int(meta["height"]), int(meta["width"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != h * w:
        raise ImageFormatError(f"{path}: expected {h * w} floats, found {raw.size}")
    arr = raw.reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ImageFormatError(f"{path}: non-finite intensity")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageFormatError(f"{path}: intensity outside [0, 1]")
    return arr


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    suffix = path.suffix.lower()
    if suffix in PGM_SUFFIXES:
        return _read_pgm(path)
    if suffix in RAW_SUFFIXES:
        return _read_raw(path)
    raise ImageFormatError(f"{path}: unsupported image format {suffix!r}")


def save_image(img, path) -> None:
    """Write ``img`` as PGM (quantised with round(v*255)) or raw float32."""
    arr = check_image(img, unit_range=True)
    path = Path(path)
    if path.is_dir():
        raise IsADirectoryError(f"cannot write image to directory {path}")
    suffix = path.suffix.lower()
    if suffix in PGM_SUFFIXES:
        h, w = arr.shape
        q = np.rint(arr * 255.0).astype(np.uint8)
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())
    elif suffix in RAW_SUFFIXES:
        arr.astype("<f4").tofile(path)
        Path(str(path) + ".json").write_text(
            json.dumps({"height": arr.shape[0], "width": arr.shape[1]}))
    else:
        raise ImageFormatError(f"{path}: unsupported image format {suffix!r}")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# ROIs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Roi:
    """Rectangle with half-open row ``[top, bottom)`` and column ``[left, right)`` ranges."""

    name: str
    purpose: str
    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValueError(f"ROI {self.name!r}: unknown purpose {self.purpose!r}")
        if not (0 <= self.top < self.bottom and 0 <= self.left < self.right):
            raise ValueError(f"ROI {self.name!r}: empty or negative extent")
        if self.area < 2:
            raise ValueError(f"ROI {self.name!r}: area must be at least 2 pixels")

    @property
    def shape(self):
        return (self.bottom - self.top, self.right - self.left)

    @property
    def area(self):
        return (self.bottom - self.top) * (self.right - self.left)

    def check_bounds(self, shape):
        h, w = shape
        if self.bottom > h or self.right > w:
            raise ValueError(f"ROI {self.name!r} exceeds image bounds {h}x{w}")


def crop(img, roi: Roi) -> np.ndarray:
    arr = check_image(img)
    roi.check_bounds(arr.shape)
    return arr[roi.top:roi.bottom, roi.left:roi.right].copy()


def load_rois(path) -> list[Roi]:
    items = json.loads(Path(path).read_text())
    if not isinstance(items, list):
        raise ValueError("ROI file must hold a JSON array")
    return [Roi(**item) for item in items]


def save_rois(rois, path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in rois], indent=2) + "\n")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    path: str
    label: int
    subject: str


class DatasetManifest:
    """Ordered list of ``Record`` with unique paths and labels in {0, 1, 2}."""

    def __init__(self, records, root=None):
        self.records = tuple(records)
        self.root = Path(root) if root is not None else None
        seen = set()
        for rec in self.records:
            if rec.label not in (0, 1, 2):
                raise ValueError(f"{rec.path}: label {rec.label} not in {{0,1,2}}")
            if rec.path in seen:
                raise ValueError(f"duplicate manifest path {rec.path}")
            seen.add(rec.path)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self):
        return [r.label for r in self.records]

    def resolve(self, record: Record) -> Path:
        p = Path(record.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_images(self):
        return [load_image(self.resolve(r)) for r in self.records]

    @classmethod
    def load(cls, path):
        path = Path(path)
        items = json.loads(path.read_text())
        if not isinstance(items, list):
            raise ValueError("manifest must hold a JSON array")
        records = []
        for item in items:
            if set(item) != {"path", "label", "subject"}:
                raise ValueError(f"bad manifest entry {item!r}")
            if not isinstance(item["label"], int) or isinstance(item["label"], bool):
                raise ValueError(f"label must be an integer: {item!r}")
            records.append(Record(str(item["path"]), item["label"], str(item["subject"])))
        return cls(records, root=path.parent)

    def save(self, path) -> None:
        payload = [asdict(r) for r in self.records]
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
