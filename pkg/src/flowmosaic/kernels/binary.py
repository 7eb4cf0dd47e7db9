"""Steered binary intensity-comparison descriptors and Hamming distances."""

import numpy as np

from . import HAVE_NUMBA, USE_NUMBA

if HAVE_NUMBA:
    from numba import njit

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int32)


def _rotated_offsets(pattern, angles):
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    ax = np.rint(c * pattern[None, :, 0] - s * pattern[None, :, 1]).astype(np.int64)
    ay = np.rint(s * pattern[None, :, 0] + c * pattern[None, :, 1]).astype(np.int64)
    bx = np.rint(c * pattern[None, :, 2] - s * pattern[None, :, 3]).astype(np.int64)
    by = np.rint(s * pattern[None, :, 2] + c * pattern[None, :, 3]).astype(np.int64)
    return ax, ay, bx, by


def _describe_np(smooth, xs, ys, angles, pattern):
    n = xs.shape[0]
    if n == 0:
        return np.zeros((0, pattern.shape[0] // 8), dtype=np.uint8)
    ax, ay, bx, by = _rotated_offsets(pattern, angles)
    px = xs[:, None]
    py = ys[:, None]
    bits = smooth[py + ay, px + ax] < smooth[py + by, px + bx]
    return np.packbits(bits, axis=1)


def _hamming_matrix_np(a, b):
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.int32)
    for k in range(a.shape[1]):
        out += _POPCOUNT[np.bitwise_xor(a[:, k][:, None], b[:, k][None, :])]
    return out


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _describe_nb(smooth, xs, ys, angles, pattern):
        n = xs.shape[0]
        nbits = pattern.shape[0]
        out = np.zeros((n, nbits // 8), dtype=np.uint8)
        for i in range(n):
            c = np.cos(angles[i])
            s = np.sin(angles[i])
            x = xs[i]
            y = ys[i]
            for b in range(nbits):
                ax = int(np.rint(c * pattern[b, 0] - s * pattern[b, 1]))
                ay = int(np.rint(s * pattern[b, 0] + c * pattern[b, 1]))
                bx = int(np.rint(c * pattern[b, 2] - s * pattern[b, 3]))
                by = int(np.rint(s * pattern[b, 2] + c * pattern[b, 3]))
                if smooth[y + ay, x + ax] < smooth[y + by, x + bx]:
                    out[i, b >> 3] |= np.uint8(1 << (7 - (b & 7)))
        return out

    @njit(cache=True, nogil=True)
    def _hamming_matrix_nb(a, b):
        table = np.empty(256, dtype=np.int32)
        for i in range(256):
            v = i
            cnt = 0
            while v:
                cnt += v & 1
                v >>= 1
            table[i] = cnt
        na, nbytes = a.shape
        nb = b.shape[0]
        out = np.zeros((na, nb), dtype=np.int32)
        for i in range(na):
            for j in range(nb):
                d = 0
                for k in range(nbytes):
                    d += table[a[i, k] ^ b[j, k]]
                out[i, j] = d
        return out

else:  # pragma: no cover
    _describe_nb = _describe_np
    _hamming_matrix_nb = _hamming_matrix_np


def describe(smooth, xs, ys, angles, pattern):
    """Pack one bit per pattern row: ``smooth[p + a] < smooth[p + b]``.

    Offsets are rotated by each keypoint's angle and rounded to the pixel
    grid; callers guarantee every rotated offset stays inside the raster.
    """
    smooth = np.ascontiguousarray(smooth, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    pattern = np.ascontiguousarray(pattern, dtype=np.float64)
    fn = _describe_nb if USE_NUMBA else _describe_np
    return fn(smooth, xs, ys, angles, pattern)


def hamming_matrix(a, b):
    """All-pairs Hamming distance between packed uint8 descriptor rows."""
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    fn = _hamming_matrix_nb if USE_NUMBA else _hamming_matrix_np
    return fn(a, b)
