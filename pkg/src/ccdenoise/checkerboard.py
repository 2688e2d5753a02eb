"""Checkerboard blind-spot construction and parity fusion.

Pixel ``(i, j)`` is *even* when ``(i + j) % 2 == 0`` and *odd* otherwise.
Blinding a parity class replaces each of its pixels with the mean of the
in-bounds 4-neighbours, which always belong to the other class.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel
from .image import check_image


class Parity(enum.Enum):
    EVEN = 0
    ODD = 1

    @property
    def other(self) -> "Parity":
        return Parity.ODD if self is Parity.EVEN else Parity.EVEN

    @classmethod
    def parse(cls, value) -> "Parity":
        if isinstance(value, Parity):
            return value
        return cls[str(value).upper()]


def parity_mask(height: int, width: int, parity: Parity) -> np.ndarray:
    """Boolean ``(height, width)`` mask of the pixels with the given parity."""
    if height < 1 or width < 1:
        raise ValueError("height and width must be positive")
    ii, jj = np.indices((height, width))
    return (ii + jj) % 2 == Parity.parse(parity).value


def blinded_positions(height: int, width: int, parity: Parity) -> set[tuple[int, int]]:
    rows, cols = np.nonzero(parity_mask(height, width, parity))
    return set(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True)
class BlindedImage:
    image: np.ndarray
    blinded: Parity


def make_blind(img, parity: Parity) -> BlindedImage:
    arr = check_image(img)
    parity = Parity.parse(parity)
    mask = parity_mask(*arr.shape, parity)
    return BlindedImage(_accel.neighbor_fill(arr, mask), parity)


def fuse(pred_for_odd, pred_for_even) -> np.ndarray:
    """Take odd pixels from ``pred_for_odd`` and even pixels from ``pred_for_even``."""
    odd_src = check_image(pred_for_odd)
    even_src = check_image(pred_for_even)
    if odd_src.shape != even_src.shape:
        raise ValueError(f"shape mismatch: {odd_src.shape} vs {even_src.shape}")
    odd = parity_mask(*odd_src.shape, Parity.ODD)
    return np.where(odd, odd_src, even_src)
