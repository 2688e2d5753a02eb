import math

import numpy as np
import pytest

from ccdenoise.checkerboard import Parity, blinded_positions, fuse, make_blind, parity_mask


def test_blinded_positions_examples():
    assert blinded_positions(2, 2, Parity.EVEN) == {(0, 0), (1, 1)}
    assert blinded_positions(2, 2, Parity.ODD) == {(0, 1), (1, 0)}
    even3 = blinded_positions(3, 3, Parity.EVEN)
    assert even3 == {(0, 0), (0, 2), (1, 1), (2, 0), (2, 2)}
    assert len(even3) == math.ceil(9 / 2)


def test_parity_helpers():
    assert Parity.EVEN.other is Parity.ODD
    assert Parity.parse("odd") is Parity.ODD
    with pytest.raises(ValueError):
        parity_mask(0, 3, Parity.EVEN)


def test_make_blind_constant_image():
    img = np.full((5, 4), 0.37)
    for p in Parity:
        # neighbour sums of three or four equal values round to within one ulp
        np.testing.assert_allclose(make_blind(img, p).image, img, rtol=2.3e-16, atol=0)


def test_make_blind_hand_example():
    img = np.arange(9, dtype=float).reshape(3, 3)
    out = make_blind(img, Parity.ODD)
    assert out.blinded is Parity.ODD
    assert out.image[0, 1] == 2.0
    assert out.image[1, 0] == pytest.approx(10 / 3, abs=1e-15)
    # even pixels untouched
    even = parity_mask(3, 3, Parity.EVEN)
    np.testing.assert_array_equal(out.image[even], img[even])


def test_make_blind_one_pixel_unchanged():
    img = np.array([[0.4]])
    np.testing.assert_array_equal(make_blind(img, Parity.EVEN).image, img)


def test_make_blind_against_enumeration(rng):
    img = rng.random((6, 7))
    for p in Parity:
        out = make_blind(img, p).image
        for i in range(6):
            for j in range(7):
                if (i + j) % 2 == p.value:
                    nb = [img[a, b] for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
                          if 0 <= a < 6 and 0 <= b < 7]
                    assert out[i, j] == pytest.approx(sum(nb) / len(nb), rel=1e-15)
                else:
                    assert out[i, j] == img[i, j]


def test_fuse_examples():
    np.testing.assert_array_equal(fuse(np.ones((2, 2)), np.zeros((2, 2))), [[0, 1], [1, 0]])
    odd_src = np.arange(9, dtype=float).reshape(3, 3)
    even_src = np.full((3, 3), 9.0)
    np.testing.assert_array_equal(fuse(odd_src, even_src), [[9, 1, 9], [3, 9, 5], [9, 7, 9]])
    x = np.random.default_rng(0).random((5, 3))
    assert fuse(x, x).tobytes() == x.tobytes()


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        fuse(np.zeros((2, 2)), np.zeros((2, 3)))
