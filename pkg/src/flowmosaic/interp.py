"""Intermediate frame synthesis by backward warping and mask fusion,
geotag interpolation, and augmented-dataset assembly."""

from __future__ import annotations

import enum
import logging
import shutil
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import (
    MANIFEST_NAME,
    FrameSequence,
    GeoTag,
    ImageFrame,
    Provenance,
    bearing_deg,
    manifest_entry,
    save_png,
    write_manifest,
)
from .errors import DimensionMismatch, OOutOfRange, TOutOfRange, ValidationError, WriteError
from .flow import FlowField, FlowParams, InternalFlowBackend, intermediate_flows, luminance

log = logging.getLogger(__name__)

DEFAULT_TAU = 2.0


class PairScope(str, enum.Enum):
    WITHIN_LEG_ONLY = "within_leg_only"
    ALL_ADJACENT = "all_adjacent"


class AugmentMode(str, enum.Enum):
    SYNTHETIC_ONLY = "synthetic"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class AugmentationPlan:
    n_intermediate: int = 3
    pair_scope: PairScope = PairScope.WITHIN_LEG_ONLY
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.n_intermediate < 0:
            raise ValidationError("n_intermediate must be >= 0")
        object.__setattr__(self, "pair_scope", PairScope(self.pair_scope))

    @property
    def timesteps(self):
        n = self.n_intermediate
        return [Fraction(k, n + 1) for k in range(1, n + 1)]


@dataclass
class FusionMask:
    m: np.ndarray  # weight of warped frame 0, in [0, 1]
    residual: np.ndarray  # |w0 - w1| in luminance, diagnostic only


def backward_warp(image, flow):
    """Sample ``image`` at ``p + flow(p)``. Returns (warped, valid)."""
    img = np.asarray(image)
    if img.shape[:2] != flow.shape:
        raise DimensionMismatch(f"image {img.shape[:2]} vs flow {flow.shape}")
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return kernels.bilinear_sample(img, xs + flow.u, ys + flow.v)


def fb_inconsistency(fwd, bwd):
    """||F_ab(q) + F_ba(q + F_ab(q))|| on frame a's pixel grid."""
    back, _ = backward_warp(np.stack([bwd.u, bwd.v], axis=-1), fwd)
    return np.hypot(fwd.u + back[:, :, 0], fwd.v + back[:, :, 1])


def fusion_mask(i0, i1, ft0, ft1, t, tau=DEFAULT_TAU, f01=None, f10=None):
    """Per-pixel weight of warped frame 0 at time t.

    A temporal prior (1 - t, t) is tilted by forward-backward flow
    inconsistency of each source, looked up where the virtual pixel lands
    in that source. Where exactly one warped sample is valid the mask snaps
    to it.
    """
    if ft0.shape != ft1.shape or np.asarray(i0).shape[:2] != ft0.shape or np.asarray(i1).shape[:2] != ft0.shape:
        raise DimensionMismatch("fusion_mask inputs disagree in shape")
    tf = float(t)
    w0, v0 = backward_warp(luminance(i0), ft0)
    w1, v1 = backward_warp(luminance(i1), ft1)
    if f01 is not None and f10 is not None:
        c0, _ = backward_warp(fb_inconsistency(f01, f10), ft0)
        c1, _ = backward_warp(fb_inconsistency(f10, f01), ft1)
    else:
        c0 = np.zeros(ft0.shape)
        c1 = np.zeros(ft0.shape)
    # Written as a logistic in the log-odds to stay finite for large c / small tau.
    base0, base1 = 1.0 - tf, tf
    with np.errstate(divide="ignore"):
        logit = (np.log(base0) - np.log(base1)) - (c0 - c1) / tau
    m = np.where(logit >= 0, 1.0 / (1.0 + np.exp(-np.abs(logit))), 1.0 - 1.0 / (1.0 + np.exp(-np.abs(logit))))
    m = np.where(v0 & ~v1, 1.0, m)
    m = np.where(v1 & ~v0, 0.0, m)
    return FusionMask(np.clip(m, 0.0, 1.0), np.abs(w0 - w1))


def blend(w0, w1, m):
    """Convex per-pixel combination ``m*w0 + (1-m)*w1`` (channels broadcast)."""
    m = np.asarray(m, dtype=np.float64)
    if np.ndim(w0) == 3:
        m = m[:, :, None]
    return m * w0 + (1.0 - m) * w1


def interpolate_geotag(g0, g1, t):
    """Linear interpolation of position and altitude; heading follows the
    g0 -> g1 bearing (endpoints are returned unchanged)."""
    t = Fraction(t)
    if not 0 <= t <= 1:
        raise TOutOfRange(f"t={t} outside [0, 1]")
    if t == 0:
        return g0
    if t == 1:
        return g1
    tf = float(t)

    def lerp(a, b):
        return (1.0 - tf) * a + tf * b

    ts = lerp(g0.timestamp, g1.timestamp) if g0.timestamp is not None and g1.timestamp is not None else None
    moved = (g0.latitude, g0.longitude) != (g1.latitude, g1.longitude)
    heading = bearing_deg(g0, g1) if moved else g0.heading
    return GeoTag(
        latitude=lerp(g0.latitude, g1.latitude),
        longitude=lerp(g0.longitude, g1.longitude),
        altitude_agl=lerp(g0.altitude_agl, g1.altitude_agl),
        timestamp=ts,
        heading=heading,
    )


def _lerp_index(a, b, t):
    a = Fraction(a if a is not None else 0)
    b = Fraction(b if b is not None else a + 1)
    return a + (b - a) * Fraction(t)


def _check_pair(f0, f1):
    if f0.pixels.shape != f1.pixels.shape:
        raise DimensionMismatch(f"{f0.name} {f0.pixels.shape} vs {f1.name} {f1.pixels.shape}")
    if f0.intrinsics != f1.intrinsics:
        raise ValidationError(f"{f0.name} and {f1.name} have different intrinsics")


def synthesize_from_flows(f0, f1, f01, f10, t, tau=DEFAULT_TAU):
    """Synthesise the frame at time t given both directional flows."""
    t = Fraction(t)
    if not 0 < t < 1:
        raise TOutOfRange(f"t={t} must lie strictly inside (0, 1)")
    ft0, ft1 = intermediate_flows(f01, f10, t)
    mask = fusion_mask(f0.pixels, f1.pixels, ft0, ft1, t, tau, f01, f10)
    w0, _ = backward_warp(f0.pixels, ft0)
    w1, _ = backward_warp(f1.pixels, ft1)
    out = blend(w0, w1, mask.m)
    info = np.iinfo(f0.pixels.dtype) if np.issubdtype(f0.pixels.dtype, np.integer) else None
    if info is not None:
        out = np.clip(np.rint(out), info.min, info.max).astype(f0.pixels.dtype)
    return ImageFrame(
        pixels=out,
        geotag=interpolate_geotag(f0.geotag, f1.geotag, t),
        intrinsics=f0.intrinsics,
        provenance=Provenance.SYNTHETIC,
        sequence_index=_lerp_index(f0.sequence_index, f1.sequence_index, t),
        name="",
    )


def synthesize_intermediate(f0, f1, t, params=None, backend=None, tau=DEFAULT_TAU):
    """Synthetic frame between two originals at fractional time t."""
    _check_pair(f0, f1)
    t = Fraction(t)
    if not 0 < t < 1:
        raise TOutOfRange(f"t={t} must lie strictly inside (0, 1)")
    params = params or FlowParams()
    backend = backend or InternalFlowBackend()
    f01 = backend(f0, f1, params)
    f10 = backend(f1, f0, params)
    return synthesize_from_flows(f0, f1, f01, f10, t, tau)


def augment_pair(f0, f1, plan, params=None, backend=None):
    """One synthetic frame per plan timestep; flows are estimated once."""
    if plan.n_intermediate == 0:
        return []
    if f0.provenance == Provenance.SYNTHETIC or f1.provenance == Provenance.SYNTHETIC:
        raise ValidationError("flows are only estimated between original frames")
    _check_pair(f0, f1)
    params = params or FlowParams()
    backend = backend or InternalFlowBackend()
    f01 = backend(f0, f1, params)
    f10 = backend(f1, f0, params)
    return [synthesize_from_flows(f0, f1, f01, f10, t, plan.tau) for t in plan.timesteps]


def pseudo_overlap(o, n):
    """Effective overlap after inserting n evenly spaced frames per pair."""
    if not 0 <= o < 1:
        raise OOutOfRange(f"overlap {o} outside [0, 1)")
    if n < 0:
        raise ValidationError("n must be >= 0")
    return 1.0 - (1.0 - o) / (n + 1)


def frame_filename(sequence_index):
    return f"frames/{float(sequence_index):010.4f}.png"


def expected_cardinality(leg_lengths, n, mode):
    synth = sum(n * max(length - 1, 0) for length in leg_lengths)
    return synth if AugmentMode(mode) == AugmentMode.SYNTHETIC_ONLY else synth + sum(leg_lengths)


def augment_sequence(seq, plan, params=None, backend=None, executor=None):
    """Synthetic frames for every eligible adjacent pair, keyed by pair."""
    within = plan.pair_scope == PairScope.WITHIN_LEG_ONLY
    pairs = seq.adjacent_pairs(within_leg=within)

    def work(pair):
        i, j = pair
        return augment_pair(seq[i], seq[j], plan, params, backend)

    results = list(executor.map(work, pairs)) if executor is not None else [work(p) for p in pairs]
    return dict(zip(pairs, results))


def build_augmented_dataset(seq, plan, mode, out_dir=None, params=None, backend=None, executor=None):
    """Interleave originals with synthetic frames (Hybrid) or keep only the
    synthetic ones (SyntheticOnly); optionally write frames + manifest.

    Originals are re-indexed 0..N-1 in flight order so synthetic indices are
    the exact fractions k/(n+1) between them.
    """
    mode = AugmentMode(mode)
    if len(seq) < 2:
        raise ValidationError("need at least 2 frames")
    originals = [replace(f, sequence_index=Fraction(i)) for i, f in enumerate(seq.frames)]
    base = FrameSequence(originals, list(seq.legs))
    synthetic = augment_sequence(base, plan, params, backend, executor)

    frames, legs = [], []
    for start, stop in base.legs:
        leg_start = len(frames)
        for i in range(start, stop):
            if mode == AugmentMode.HYBRID:
                frames.append(originals[i])
            # cross-leg synthetics (ALL_ADJACENT only) stay with the earlier leg
            frames.extend(synthetic.get((i, i + 1), []))
        legs.append((leg_start, len(frames)))
    if plan.pair_scope == PairScope.WITHIN_LEG_ONLY:
        expected = expected_cardinality([b - a for a, b in base.legs], plan.n_intermediate, mode)
        if len(frames) != expected:
            raise AssertionError(f"cardinality {len(frames)} != expected {expected}")

    named = []
    for f in frames:
        name = frame_filename(f.sequence_index)
        named.append(replace(f, name=name))
    legs = [(a, b) for a, b in legs if b > a]
    result = FrameSequence(named, legs)
    if out_dir is not None:
        write_dataset(result, out_dir)
    return result


def write_dataset(seq, out_dir):
    """Write ``frames/*.png`` plus ``manifest.json`` (atomic manifest)."""
    out = Path(out_dir)
    try:
        if (out / "frames").exists():
            shutil.rmtree(out / "frames")
        (out / "frames").mkdir(parents=True, exist_ok=True)
        entries = {}
        for f in seq.frames:
            name = f.name or frame_filename(f.sequence_index)
            save_png(out / name, f.pixels)
            entries[name] = manifest_entry(f)
        write_manifest(out, entries)
    except OSError as exc:
        raise WriteError(f"{out}: {exc}") from exc
    return out / MANIFEST_NAME
