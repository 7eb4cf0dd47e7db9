"""Feature-based registration and orthomosaic compositing."""

from .canvas import MosaicCanvas, canvas_to_local, mosaic_rmse, render_mosaic, resample_canvas
from .features import FeatureSet, detect_features, match_features
from .homography import Homography, apply_homography, estimate_homography
from .registration import candidate_pairs, chain_registration, refine_transforms, register_pair, register_sequence

__all__ = [
    "FeatureSet",
    "Homography",
    "MosaicCanvas",
    "apply_homography",
    "canvas_to_local",
    "candidate_pairs",
    "chain_registration",
    "refine_transforms",
    "detect_features",
    "estimate_homography",
    "match_features",
    "mosaic_rmse",
    "register_pair",
    "register_sequence",
    "render_mosaic",
    "resample_canvas",
]
