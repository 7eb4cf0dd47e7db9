"""Pairwise registration over a frame graph and composition to an anchor."""

from __future__ import annotations

import heapq
import logging

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import lil_matrix

from ..dataset import estimate_overlap
from ..errors import DegenerateConfiguration, DisconnectedChain, InsufficientMatches, ValidationError
from .features import match_features
from .homography import apply_homography, estimate_homography

log = logging.getLogger(__name__)


def candidate_pairs(frames, min_overlap=0.2):
    """Consecutive pairs plus every other pair whose GPS footprints are
    predicted to overlap by at least ``min_overlap``."""
    pairs = set()
    n = len(frames)
    for i in range(n - 1):
        pairs.add((i, i + 1))
    for i in range(n):
        for j in range(i + 2, n):
            try:
                o = estimate_overlap(frames[i], frames[j])
            except ValidationError:
                continue
            if o >= min_overlap:
                pairs.add((i, j))
    return sorted(pairs)


def plausible(h, max_scale_change=2.0, max_perspective=2e-3):
    """Reject transforms that no near-nadir, fixed-altitude pair could produce."""
    det = np.linalg.det(h[:2, :2])
    if not det > 0:
        return False
    s = np.sqrt(det)
    if s > max_scale_change or s < 1.0 / max_scale_change:
        return False
    return abs(h[2, 0]) < max_perspective and abs(h[2, 1]) < max_perspective


def register_pair(fa, fb, pair, threshold=1.5, max_iters=2000, seed=0, min_inliers=12):
    """Homography mapping pixels of frame ``pair[0]`` into frame ``pair[1]``,
    or None when the pair cannot be registered."""
    m = match_features(fa, fb)
    if len(m) < 4:
        return None
    src = fa.xy[m[:, 0]]
    dst = fb.xy[m[:, 1]]
    try:
        hom = estimate_homography(src, dst, threshold, max_iters, seed)
    except (InsufficientMatches, DegenerateConfiguration) as exc:
        log.debug("pair %s rejected: %s", pair, exc)
        return None
    if hom.inlier_count < min_inliers or not plausible(hom.h):
        return None
    hom.pair = tuple(pair)
    hom.matches = (src[hom.inliers], dst[hom.inliers])
    return hom


def chain_registration(pairwise, n_frames, anchor=None):
    """Per-frame 3x3 transforms taking frame pixels into anchor pixels.

    ``pairwise`` holds homographies whose ``pair = (i, j)`` maps frame i
    onto frame j. Transforms follow a shortest-path tree rooted at the
    anchor (default: middle frame); among equal hop counts, edges with more
    inliers win.
    """
    if n_frames < 1:
        raise ValidationError("no frames")
    if anchor is None:
        anchor = (n_frames - 1) // 2
    if not 0 <= anchor < n_frames:
        raise ValidationError(f"anchor {anchor} outside [0, {n_frames})")
    adj = {k: [] for k in range(n_frames)}
    for hom in pairwise:
        i, j = hom.pair
        # edge (neighbour, transform neighbour->self)
        adj[j].append((i, hom.h, hom.inlier_count))
        adj[i].append((j, np.linalg.inv(hom.h), hom.inlier_count))

    transforms = [None] * n_frames
    transforms[anchor] = np.eye(3)
    dist = {anchor: 0.0}
    heap = [(0.0, anchor)]
    done = set()
    while heap:
        d, k = heapq.heappop(heap)
        if k in done:
            continue
        done.add(k)
        for nb, h_nb_to_k, inliers in sorted(adj[k], key=lambda e: e[0]):
            if nb in done:
                continue
            nd = d + 1.0 / max(inliers, 1)
            if nd < dist.get(nb, np.inf):
                dist[nb] = nd
                t = transforms[k] @ h_nb_to_k
                transforms[nb] = t / t[2, 2]
                heapq.heappush(heap, (nd, nb))
    missing = [k for k in range(n_frames) if transforms[k] is None]
    if missing:
        raise DisconnectedChain(f"frames {missing} are not connected to anchor {anchor}")
    return transforms


def _spread_subset(n, k):
    if n <= k:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, k).round().astype(int))


def refine_transforms(pairwise, transforms, anchor, frame_size=(512, 512), points_per_pair=40, loss_scale=1.0):
    """Jointly adjust every non-anchor transform so that all pairwise inlier
    correspondences agree in anchor coordinates.

    Chaining only uses one path per frame, so a single poorly constrained
    pair (e.g. a thin overlap strip leaving the perspective terms loose)
    propagates unchecked. Here each correspondence (p in i, q in j) adds the
    residual T_i(p) - T_j(q); the anchor stays fixed at identity. Transforms
    are parameterised in normalised pixel units to keep the problem well
    conditioned, and a soft-L1 loss limits the pull of residual outliers.
    """
    n = len(transforms)
    obs = [h for h in pairwise if h.matches is not None and len(h.matches[0]) >= 4]
    if n < 2 or not obs:
        return [np.array(t, dtype=np.float64) for t in transforms]
    w, hgt = frame_size
    norm = np.array([[2.0 / w, 0.0, -1.0], [0.0, 2.0 / hgt, -1.0], [0.0, 0.0, 1.0]])
    denorm = np.linalg.inv(norm)
    free = [k for k in range(n) if k != anchor]
    slot = {k: s for s, k in enumerate(free)}

    def to_params(t):
        p = norm @ t @ denorm
        return (p / p[2, 2]).ravel()[:8]

    def to_matrix(x8):
        return denorm @ np.append(x8, 1.0).reshape(3, 3) @ norm

    x0 = np.concatenate([to_params(np.asarray(transforms[k], dtype=np.float64)) for k in free])
    edges = []
    for h in obs:
        i, j = h.pair
        sel = _spread_subset(len(h.matches[0]), points_per_pair)
        edges.append((i, j, h.matches[0][sel], h.matches[1][sel]))
    m = sum(2 * len(e[2]) for e in edges)

    sparsity = lil_matrix((m, 8 * len(free)), dtype=np.int8)
    row = 0
    for i, j, p, _ in edges:
        rows = slice(row, row + 2 * len(p))
        for k in (i, j):
            if k != anchor:
                sparsity[rows, 8 * slot[k] : 8 * slot[k] + 8] = 1
        row += 2 * len(p)

    def residuals(x):
        mats = [None] * n
        for k in range(n):
            mats[k] = np.eye(3) if k == anchor else to_matrix(x[8 * slot[k] : 8 * slot[k] + 8])
        out = [(apply_homography(mats[i], p) - apply_homography(mats[j], q)).ravel() for i, j, p, q in edges]
        return np.concatenate(out)

    sol = least_squares(
        residuals, x0, jac_sparsity=sparsity, loss="soft_l1", f_scale=loss_scale, method="trf", x_scale="jac"
    )
    if not sol.success or not np.all(np.isfinite(sol.x)):
        log.warning("joint refinement did not converge; keeping chained transforms")
        return [np.array(t, dtype=np.float64) for t in transforms]
    out = []
    for k in range(n):
        t = np.eye(3) if k == anchor else to_matrix(sol.x[8 * slot[k] : 8 * slot[k] + 8])
        out.append(t / t[2, 2])
    return out


def register_sequence(frames, features, threshold=1.5, max_iters=2000, seed=0, min_overlap=0.2, executor=None):
    """Estimate every candidate pair; returns the successful homographies."""
    pairs = candidate_pairs(frames, min_overlap)

    def work(p):
        return register_pair(features[p[0]], features[p[1]], p, threshold, max_iters, seed)

    results = list(executor.map(work, pairs)) if executor is not None else [work(p) for p in pairs]
    return [h for h in results if h is not None]
