"""Sequence-level orchestration: register, chain and composite."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mosaic import chain_registration, detect_features, register_sequence, render_mosaic
from .mosaic.registration import refine_transforms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RansacSettings:
    threshold: float = 1.5
    max_iters: int = 2000
    confidence: float = 0.999
    seed: int = 0


@dataclass
class MosaicResult:
    canvas: object
    transforms: list
    pairwise: list
    anchor: int

    def inlier_stats(self):
        counts = [h.inlier_count for h in self.pairwise]
        rms = [h.inlier_rms for h in self.pairwise]
        return {
            "pairs": len(self.pairwise),
            "mean_inliers": float(np.mean(counts)) if counts else 0.0,
            "min_inliers": int(min(counts)) if counts else 0,
            "mean_inlier_rms": float(np.mean(rms)) if rms else 0.0,
        }


def mosaic_sequence(frames, ransac=None, max_features=1000, min_overlap=0.2, scale=None, anchor=None, executor=None, refine=True):
    """Estimate registration for ``frames`` and render the orthomosaic."""
    ransac = ransac or RansacSettings()
    frames = list(frames)
    if len(frames) == 1:
        canvas = render_mosaic(frames, [np.eye(3)], scale, 0)
        return MosaicResult(canvas, [np.eye(3)], [], 0)
    if executor is not None:
        features = list(executor.map(lambda f: detect_features(f, max_features), frames))
    else:
        features = [detect_features(f, max_features) for f in frames]
    pairwise = register_sequence(
        frames, features, ransac.threshold, ransac.max_iters, ransac.seed, min_overlap, executor
    )
    if anchor is None:
        anchor = (len(frames) - 1) // 2
    transforms = chain_registration(pairwise, len(frames), anchor)
    if refine:
        a = frames[anchor]
        transforms = refine_transforms(pairwise, transforms, anchor, (a.width, a.height))
    canvas = render_mosaic(frames, transforms, scale, anchor)
    return MosaicResult(canvas, transforms, pairwise, anchor)
