"""Time the numba kernels against their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``.  The first numba call per
kernel compiles, so it is made once before timing starts.
"""
import argparse
import timeit

import numpy as np

from ccdenoise import _accel as A


def cases(rng, batch):
    xp = rng.standard_normal((batch, 66, 66, 16))
    oh = ow = 64
    cols = A.im2col_numpy(xp, 3, 1, 1, oh, ow)
    img = rng.random((64, 64))
    mask = (np.add.outer(np.arange(64), np.arange(64)) % 2) == 1
    x2 = rng.standard_normal((batch * 64 * 64, 16))
    g, b = np.ones(16), np.zeros(16)
    xhat = A.bn_train_forward_numpy(x2, g, b, 1e-5)[1]
    return {
        "im2col 3x3": ("im2col", (xp, 3, 1, 1, oh, ow)),
        "col2im 3x3": ("col2im", (cols, xp.shape, 1, 1)),
        "neighbor fill": ("neighbor_fill", (img, mask)),
        "laplacian": ("laplacian", (img,)),
        "bn forward": ("bn_train_forward", (x2, g, b, 1e-5)),
        "bn backward": ("bn_train_backward", (x2, xhat, g)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not A.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, (stem, call_args) in cases(rng, args.batch).items():
        slow = getattr(A, stem + "_numpy")
        fast = getattr(A, stem + "_numba")
        fast(*call_args)  # compile
        t_np = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        print(f"{label:<16}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
