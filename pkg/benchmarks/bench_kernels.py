"""Time each hot kernel on its numba and numpy paths and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 512]

The first numba call (JIT compile, or cache load) is excluded from timing.
"""

import argparse
import time

import numpy as np

from flowmosaic.kernels import HAVE_NUMBA, binary, hs, sampling
from flowmosaic.mosaic.features import PATTERN


def _best(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(size, rng):
    img = rng.uniform(0, 255, (size, size, 3))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    xs = xs + rng.uniform(-3, 3, xs.shape)
    ys = ys + rng.uniform(-3, 3, ys.shape)
    yield "bilinear_sample", (img, xs, ys)

    canvas = 2 * size
    m = np.array([[np.cos(0.1), -np.sin(0.1), -size / 3], [np.sin(0.1), np.cos(0.1), -size / 4], [0.0, 0.0, 1.0]])
    acc = np.zeros((canvas, canvas, 3))
    wsum = np.zeros((canvas, canvas))
    yield "accumulate_frame", (acc, wsum, img, m, 0, canvas, 0, canvas)

    fields = [rng.standard_normal((size, size)) for _ in range(7)]
    mask = (rng.uniform(size=(size, size)) > 0.05).astype(np.float64)
    yield "hs_step", (*fields, mask, 225.0)

    gray = rng.uniform(0, 255, (size, size))
    n = 1000
    kx = rng.integers(20, size - 20, n).astype(np.int64)
    ky = rng.integers(20, size - 20, n).astype(np.int64)
    ang = rng.uniform(-np.pi, np.pi, n)
    yield "describe", (gray, kx, ky, ang, PATTERN)

    a = rng.integers(0, 256, (n, 32), dtype=np.uint8)
    b = rng.integers(0, 256, (n, 32), dtype=np.uint8)
    yield "hamming_matrix", (a, b)


PAIRS = {
    "bilinear_sample": (sampling._bilinear_sample_np, sampling._bilinear_sample_nb),
    "accumulate_frame": (sampling._accumulate_frame_np, sampling._accumulate_frame_nb),
    "hs_step": (hs._hs_step_np, hs._hs_step_nb),
    "describe": (binary._describe_np, binary._describe_nb),
    "hamming_matrix": (binary._hamming_matrix_np, binary._hamming_matrix_nb),
}


def _copy(args):
    return tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    if a is None:
        return True
    return np.allclose(a, b, rtol=1e-9, atol=1e-9)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, case in _cases(args.size, rng):
        f_np, f_nb = PAIRS[name]
        f_nb(*_copy(case))  # compile / load cache
        if name == "accumulate_frame":
            # in-place kernel: compare the buffers it fills
            a_np, a_nb = _copy(case), _copy(case)
            t_np, _ = _best(lambda: f_np(*a_np), (), 1)
            t_nb, _ = _best(lambda: f_nb(*a_nb), (), 1)
            t_np = min(t_np, _best(lambda: f_np(*_copy(case)), (), args.repeat)[0])
            t_nb = min(t_nb, _best(lambda: f_nb(*_copy(case)), (), args.repeat)[0])
            ok = _agree((a_np[0], a_np[1]), (a_nb[0], a_nb[1]))
        else:
            t_np, o_np = _best(f_np, case, args.repeat)
            t_nb, o_nb = _best(f_nb, case, args.repeat)
            ok = _agree(o_np, o_nb)
        print(f"{name:<18}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
