"""Harris corners with steered 256-bit binary descriptors, and Hamming
ratio/cross-check matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import kernels
from ..flow import luminance

BORDER = 15
NMS_RADIUS = 5
DESCRIPTOR_BITS = 256
PATTERN_SEED = 20240917
PATTERN_RADIUS = 13.0
HARRIS_K = 0.04
QUALITY = 1e-3


def _make_pattern(seed=PATTERN_SEED, nbits=DESCRIPTOR_BITS):
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < nbits:
        p = np.rint(rng.normal(0.0, 31.0 / 5.0, size=4))
        if np.hypot(p[0], p[1]) > PATTERN_RADIUS or np.hypot(p[2], p[3]) > PATTERN_RADIUS:
            continue
        if p[0] == p[2] and p[1] == p[3]:
            continue
        rows.append(p)
    return np.array(rows)


PATTERN = _make_pattern()

_yy, _xx = np.mgrid[-BORDER : BORDER + 1, -BORDER : BORDER + 1]
_DISK = _xx**2 + _yy**2 <= BORDER**2
_DISK_X = _xx[_DISK]
_DISK_Y = _yy[_DISK]


@dataclass
class FeatureSet:
    xy: np.ndarray  # (N, 2) float, sub-pixel (x, y)
    response: np.ndarray  # (N,)
    angle: np.ndarray  # (N,) radians
    descriptors: np.ndarray  # (N, 32) uint8, packed bits

    def __len__(self):
        return len(self.xy)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros((0, DESCRIPTOR_BITS // 8), np.uint8))


def harris_response(lum, sigma_d=1.0, sigma_i=1.5, k=HARRIS_K):
    g = ndimage.gaussian_filter(lum, sigma_d, mode="reflect")
    ix = ndimage.sobel(g, axis=1, mode="reflect") / 8.0
    iy = ndimage.sobel(g, axis=0, mode="reflect") / 8.0
    sxx = ndimage.gaussian_filter(ix * ix, sigma_i, mode="reflect")
    syy = ndimage.gaussian_filter(iy * iy, sigma_i, mode="reflect")
    sxy = ndimage.gaussian_filter(ix * iy, sigma_i, mode="reflect")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _subpixel(r, x, y):
    def offset(m, c, p):
        den = m - 2.0 * c + p
        return np.where(np.abs(den) > 1e-12, np.clip(0.5 * (m - p) / np.where(den == 0, 1, den), -0.5, 0.5), 0.0)

    c = r[y, x]
    dx = offset(r[y, x - 1], c, r[y, x + 1])
    dy = offset(r[y - 1, x], c, r[y + 1, x])
    return x + dx, y + dy


def detect_features(image, max_count=1000):
    """Strongest Harris corners at least 15 px from the border, with a
    rotation-steered descriptor per corner. Sorted by response, descending."""
    lum = luminance(getattr(image, "pixels", image))
    h, w = lum.shape
    if h <= 2 * BORDER or w <= 2 * BORDER or max_count <= 0:
        return FeatureSet.empty()
    r = harris_response(lum)
    rmax = float(r.max())
    if not rmax > 0:
        return FeatureSet.empty()
    size = 2 * NMS_RADIUS + 1
    peak = (r == ndimage.maximum_filter(r, size=size, mode="constant", cval=-np.inf)) & (r > QUALITY * rmax)
    peak[:BORDER, :] = False
    peak[h - BORDER :, :] = False
    peak[:, :BORDER] = False
    peak[:, w - BORDER :] = False
    ys, xs = np.nonzero(peak)
    order = np.argsort(-r[ys, xs], kind="stable")
    ys, xs = ys[order], xs[order]

    # Plateaus can leave several equal maxima inside one radius; keep the first.
    taken = np.zeros((h, w), dtype=bool)
    keep = []
    rad2 = NMS_RADIUS**2
    for k in range(len(xs)):
        x, y = xs[k], ys[k]
        if taken[y, x]:
            continue
        keep.append(k)
        if len(keep) >= max_count:
            break
        y0, y1 = max(0, y - NMS_RADIUS), min(h, y + NMS_RADIUS + 1)
        x0, x1 = max(0, x - NMS_RADIUS), min(w, x + NMS_RADIUS + 1)
        gy, gx = np.mgrid[y0:y1, x0:x1]
        taken[y0:y1, x0:x1] |= (gx - x) ** 2 + (gy - y) ** 2 <= rad2
    keep = np.array(keep, dtype=np.int64)
    if keep.size == 0:
        return FeatureSet.empty()
    xs, ys = xs[keep], ys[keep]
    response = r[ys, xs]
    sx, sy = _subpixel(r, xs, ys)

    smooth = ndimage.gaussian_filter(lum, 2.0, mode="reflect")
    patch = smooth[ys[:, None] + _DISK_Y[None, :], xs[:, None] + _DISK_X[None, :]]
    m10 = (patch * _DISK_X[None, :]).sum(axis=1)
    m01 = (patch * _DISK_Y[None, :]).sum(axis=1)
    angle = np.arctan2(m01, m10)
    desc = kernels.describe(smooth, xs, ys, angle, PATTERN)
    return FeatureSet(np.stack([sx, sy], axis=1), response, angle, desc)


def match_features(a, b, ratio=0.8, cross_check=True):
    """Mutual nearest neighbours passing the Hamming ratio test.

    Returns an int array of rows ``(index_in_a, index_in_b, distance)``
    sorted by distance, then by index in b.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    d = kernels.hamming_matrix(a.descriptors, b.descriptors)
    j1 = np.argmin(d, axis=1)
    rows = np.arange(d.shape[0])
    d1 = d[rows, j1]
    if d.shape[1] > 1:
        d2 = np.partition(d, 1, axis=1)[:, 1].astype(np.float64)
    else:
        d2 = np.full(d.shape[0], np.inf)
    keep = d1 < ratio * d2
    if cross_check:
        i_back = np.argmin(d, axis=0)
        keep &= i_back[j1] == rows
    out = np.stack([rows[keep], j1[keep], d1[keep]], axis=1).astype(np.int64)
    order = np.lexsort((out[:, 1], out[:, 2]))
    return out[order]
