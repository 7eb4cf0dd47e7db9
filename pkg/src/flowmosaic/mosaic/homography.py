"""Projective transforms: normalised DLT inside a seeded RANSAC loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DegenerateConfiguration, InsufficientMatches

MIN_FINAL_INLIERS = 8


@dataclass
class Homography:
    h: np.ndarray
    inlier_count: int = 0
    inlier_rms: float = 0.0
    pair: Optional[tuple] = None
    inliers: Optional[np.ndarray] = field(default=None, repr=False)
    # inlier correspondences (src, dst) kept for joint refinement
    matches: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if abs(h[2, 2]) > 1e-15:
            h = h / h[2, 2]
        self.h = h

    def inverse(self):
        pair = None if self.pair is None else (self.pair[1], self.pair[0])
        return Homography(np.linalg.inv(self.h), self.inlier_count, self.inlier_rms, pair)

    def apply(self, pts):
        return apply_homography(self.h, pts)


def apply_homography(h, pts):
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    den = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
    x = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / den
    y = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / den
    return np.stack([x, y], axis=1)


def normalize_points(pts):
    """Hartley conditioning: centroid to origin, mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return t, (pts - c) * s


def dlt(src, dst):
    """Least-squares homography src -> dst (>= 4 points), or None if singular."""
    t1, a = normalize_points(src)
    t2, b = normalize_points(dst)
    n = a.shape[0]
    m = np.zeros((2 * n, 9))
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    m[0::2, 0] = x
    m[0::2, 1] = y
    m[0::2, 2] = 1.0
    m[0::2, 6] = -u * x
    m[0::2, 7] = -u * y
    m[0::2, 8] = -u
    m[1::2, 3] = x
    m[1::2, 4] = y
    m[1::2, 5] = 1.0
    m[1::2, 6] = -v * x
    m[1::2, 7] = -v * y
    m[1::2, 8] = -v
    _, _, vt = np.linalg.svd(m)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.solve(t2, hn @ t1)
    if abs(h[2, 2]) < 1e-15 or not np.all(np.isfinite(h)):
        return None
    h = h / h[2, 2]
    if abs(np.linalg.det(h[:2, :2])) < 1e-12:
        return None
    return h


def symmetric_transfer_error(h, src, dst):
    """Per-point RMS of forward and backward reprojection distances."""
    try:
        hinv = np.linalg.inv(h)
    except np.linalg.LinAlgError:
        return np.full(len(src), np.inf)
    fwd = apply_homography(h, src) - dst
    bwd = apply_homography(hinv, dst) - src
    err = np.sqrt(0.5 * ((fwd**2).sum(axis=1) + (bwd**2).sum(axis=1)))
    return np.where(np.isfinite(err), err, np.inf)


def _collinear(p, tol=1e-6):
    _, q = normalize_points(p)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = q[j] - q[i]
        b = q[k] - q[i]
        if abs(a[0] * b[1] - a[1] * b[0]) < tol:
            return True
    return False


def _adaptive_iterations(inlier_ratio, confidence, cap):
    if inlier_ratio >= 1.0:
        return 1
    if inlier_ratio <= 0.0:
        return cap
    denom = math.log1p(-(inlier_ratio**4))
    if denom == 0.0:
        return cap
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / denom)))


def estimate_homography(src, dst, threshold=1.5, max_iters=2000, seed=0, confidence=0.999):
    """Robust homography mapping ``src`` points onto ``dst`` points.

    Minimal 4-point samples are scored by symmetric transfer error; the best
    consensus set is refit by normalised least squares until it stops
    changing. At least ``min(8, len(src))`` final inliers are required.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise InsufficientMatches(f"need >= 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)

    best_h, best_mask, best_count, best_cost = None, None, -1, np.inf
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        idx = rng.choice(n, 4, replace=False)
        if _collinear(src[idx]) or _collinear(dst[idx]):
            continue
        h = dlt(src[idx], dst[idx])
        if h is None:
            continue
        err = symmetric_transfer_error(h, src, dst)
        mask = err < threshold
        count = int(mask.sum())
        cost = float(err[mask].sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_h, best_mask, best_count, best_cost = h, mask, count, cost
            needed = _adaptive_iterations(count / n, confidence, max_iters)
    if best_h is None:
        raise DegenerateConfiguration("every sampled quadruple was collinear")

    h, mask = best_h, best_mask
    for _ in range(5):
        if mask.sum() < 4:
            break
        refit = dlt(src[mask], dst[mask])
        if refit is None:
            break
        err = symmetric_transfer_error(refit, src, dst)
        new_mask = err < threshold
        if new_mask.sum() < mask.sum():
            break
        h = refit
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask

    err = symmetric_transfer_error(h, src, dst)
    mask = err < threshold
    count = int(mask.sum())
    if count < min(MIN_FINAL_INLIERS, n):
        raise DegenerateConfiguration(f"only {count} inliers after refit")
    rms = float(np.sqrt(np.mean(err[mask] ** 2)))
    return Homography(h, count, rms, None, mask)
