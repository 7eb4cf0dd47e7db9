import json
from fractions import Fraction

import numpy as np
import pytest

from flowmosaic import synthfield as sf
from flowmosaic.analytics import psnr
from flowmosaic.dataset import FrameSequence, GeoTag, LocalTangent, Provenance, load_dataset, order_flight_sequence
from flowmosaic.errors import DimensionMismatch, OOutOfRange, TOutOfRange, ValidationError
from flowmosaic.flow import FlowField
from flowmosaic.interp import (
    AugmentationPlan,
    AugmentMode,
    PairScope,
    augment_pair,
    backward_warp,
    build_augmented_dataset,
    expected_cardinality,
    frame_filename,
    fusion_mask,
    interpolate_geotag,
    pseudo_overlap,
    synthesize_intermediate,
)
from helpers import make_frame, shift_image


def const_flow(shape, u, v, src=0, dst=1):
    return FlowField(np.full(shape, float(u)), np.full(shape, float(v)), Fraction(src), Fraction(dst))


def textured(size=64, seed=0):
    rng = np.random.default_rng(seed)
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.uniform(0, 255, (size, size, 3)), (2, 2, 0))
    img = (img - img.min()) / (img.max() - img.min()) * 200 + 20
    return np.rint(img).astype(np.uint8)


def strip(n, spacing=0.25, size=64, seed=0):
    """n textured frames along an eastward line (content need not move)."""
    frames = []
    for k in range(n):
        lat, lon = LocalTangent(40.0, -83.0).to_geo(k * spacing, 0.0)
        frames.append(make_frame(textured(size, seed + k), lat=float(lat), lon=float(lon), timestamp=float(k), name=f"f{k:02d}.png"))
    return order_flight_sequence(frames)


# -- warping and masks ---------------------------------------------------------


def test_zero_flow_warp_is_identity():
    img = textured()
    out, valid = backward_warp(img, const_flow(img.shape[:2], 0, 0))
    np.testing.assert_array_equal(out, img)
    assert valid.all()


def test_unit_flow_on_ramp():
    h, w = 6, 10
    ramp = np.tile(np.arange(w, dtype=float), (h, 1))
    out, valid = backward_warp(ramp, const_flow((h, w), 1, 0))
    np.testing.assert_array_equal(out[:, : w - 1], ramp[:, : w - 1] + 1)
    assert valid[:, : w - 1].all() and not valid[:, w - 1].any()


def test_flow_by_full_width_is_all_invalid():
    img = textured(32)
    _, valid = backward_warp(img, const_flow((32, 32), 32, 0))
    assert not valid.any()


def test_warp_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        backward_warp(np.zeros((8, 8)), const_flow((8, 9), 0, 0))


@pytest.mark.parametrize("t,expected", [(Fraction(1, 2), 0.5), (Fraction(0), 1.0), (Fraction(1, 4), 0.75)])
def test_mask_with_consistent_flows_is_temporal_prior(t, expected):
    img = textured(32)
    z = const_flow((32, 32), 0, 0, t, 0)
    m = fusion_mask(img, img, z, const_flow((32, 32), 0, 0, t, 1), t)
    np.testing.assert_allclose(m.m, expected)


def test_mask_snaps_to_valid_source():
    img = textured(32)
    # source 0 sampled far outside on the right half, source 1 always inside
    u0 = np.zeros((32, 32))
    u0[:, 16:] = 100.0
    ft0 = FlowField(u0, np.zeros((32, 32)), Fraction(1, 2), Fraction(0))
    ft1 = const_flow((32, 32), 0, 0, Fraction(1, 2), 1)
    m = fusion_mask(img, img, ft0, ft1, Fraction(1, 2)).m
    assert (m[:, 16:] == 0.0).all()
    assert np.allclose(m[:, :16], 0.5)


def test_mask_prefers_consistent_source():
    img = textured(32)
    shape = (32, 32)
    half = Fraction(1, 2)
    f01 = const_flow(shape, 3, 0)
    f10_bad = const_flow(shape, 0, 0, 1, 0)  # inconsistent with f01 by 3 px
    m = fusion_mask(img, img, const_flow(shape, 0, 0, half, 0), const_flow(shape, 0, 0, half, 1), half, 2.0, f01, f10_bad).m
    # both sources equally inconsistent -> prior
    assert np.allclose(m[8:24, 8:24], 0.5)
    assert ((m >= 0) & (m <= 1)).all()


# -- synthesis -----------------------------------------------------------------


@pytest.mark.parametrize("t", [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)])
def test_static_scene_fixpoint(t):
    f = make_frame(textured(48))
    out = synthesize_intermediate(f, make_frame(f.pixels.copy()), t)
    np.testing.assert_array_equal(out.pixels, f.pixels)
    assert out.provenance == Provenance.SYNTHETIC
    assert out.intrinsics == f.intrinsics


def test_shifted_pair_midpoint(field, intr):
    base, _ = sf.render_view(field, sf.plan_flight(field, intr).poses[0], intr, 0.0)
    img = base.pixels.astype(float)
    f0 = make_frame(base.pixels)
    f1 = make_frame(np.clip(np.rint(shift_image(img, 8, 0)), 0, 255).astype(np.uint8))
    out = synthesize_intermediate(f0, f1, Fraction(1, 2))
    ref = shift_image(img, 4, 0)
    sl = (slice(24, -24), slice(24, -24))
    assert psnr(out.pixels[sl].astype(float), ref[sl]) > 30.0


def test_t_out_of_range():
    f = make_frame(textured(32))
    for t in (0, 1, Fraction(5, 4)):
        with pytest.raises(TOutOfRange):
            synthesize_intermediate(f, f, t)


def test_synthetic_sources_rejected():
    f = make_frame(textured(32))
    s = make_frame(textured(32), provenance=Provenance.SYNTHETIC)
    with pytest.raises(ValidationError):
        augment_pair(f, s, AugmentationPlan(1))


# -- geotags -------------------------------------------------------------------


def test_geotag_examples():
    g0 = GeoTag(40.0, -83.0, 15.0)
    g1 = GeoTag(40.001, -83.0, 15.0)
    assert interpolate_geotag(g0, g1, 0) is g0
    q = interpolate_geotag(g0, g1, Fraction(1, 4))
    assert q.latitude == pytest.approx(40.00025, abs=1e-12)
    assert q.longitude == -83.0 and q.altitude_agl == 15.0
    assert q.heading == pytest.approx(0.0, abs=1e-9)
    assert q.timestamp is None
    mid = interpolate_geotag(g0, g1, Fraction(1, 2))
    rev = interpolate_geotag(g1, g0, Fraction(1, 2))
    assert (mid.latitude, mid.longitude, mid.altitude_agl) == (rev.latitude, rev.longitude, rev.altitude_agl)


def test_geotag_timestamp_and_heading():
    g0 = GeoTag(40.0, -83.0, 15.0, timestamp=10.0)
    lat, lon = LocalTangent(40.0, -83.0).to_geo(-5.0, 0.0)
    g1 = GeoTag(float(lat), float(lon), 15.0, timestamp=20.0)
    q = interpolate_geotag(g0, g1, Fraction(1, 2))
    assert q.timestamp == 15.0
    assert q.heading == pytest.approx(270.0, abs=1e-6)


# -- plans and datasets --------------------------------------------------------


def test_plan_timesteps():
    assert AugmentationPlan(3).timesteps == [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]
    assert AugmentationPlan(1).timesteps == [Fraction(1, 2)]
    assert AugmentationPlan(0).timesteps == []
    with pytest.raises(ValidationError):
        AugmentationPlan(-1)


def test_augment_pair_counts():
    seq = strip(2)
    assert augment_pair(seq[0], seq[1], AugmentationPlan(0)) == []
    out = augment_pair(seq[0], seq[1], AugmentationPlan(3))
    assert [f.sequence_index for f in out] == [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)]
    assert all(f.provenance == Provenance.SYNTHETIC for f in out)


def test_pseudo_overlap_examples():
    assert pseudo_overlap(0.5, 3) == 0.875
    assert pseudo_overlap(0.37, 0) == 0.37
    assert pseudo_overlap(0.25, 1) == 0.625
    for o in (-0.1, 1.0):
        with pytest.raises(OOutOfRange):
            pseudo_overlap(o, 2)


@pytest.mark.parametrize("mode,expected", [("hybrid", 37), ("synthetic", 27)])
def test_cardinality_n10(mode, expected):
    seq = strip(10, size=32)
    out = build_augmented_dataset(seq, AugmentationPlan(3), mode)
    assert len(out) == expected == expected_cardinality([10], 3, mode)
    idx = [f.sequence_index for f in out]
    assert idx == sorted(idx)
    if mode == "hybrid":
        assert [f.sequence_index for f in out if f.provenance == Provenance.ORIGINAL] == list(range(10))


def test_cross_leg_pairs_only_on_request():
    seq = strip(4, size=32)
    two_legs = FrameSequence(seq.frames, [(0, 2), (2, 4)])
    within = build_augmented_dataset(two_legs, AugmentationPlan(1), AugmentMode.HYBRID)
    assert len(within) == 4 + 2
    every = build_augmented_dataset(two_legs, AugmentationPlan(1, PairScope.ALL_ADJACENT), AugmentMode.HYBRID)
    assert len(every) == 4 + 3


def test_written_dataset_round_trip(tmp_path):
    seq = strip(4, size=32)
    out = build_augmented_dataset(seq, AugmentationPlan(3), "hybrid", out_dir=tmp_path / "a")
    assert (tmp_path / "a" / frame_filename(Fraction(1, 4))).exists()
    loaded = load_dataset(tmp_path / "a")
    assert len(loaded) == len(out) == 13
    for a, b in zip(out, loaded):
        assert abs(a.geotag.latitude - b.geotag.latitude) < 1e-7
        assert abs(a.geotag.longitude - b.geotag.longitude) < 1e-7
        assert a.sequence_index == b.sequence_index
        assert a.provenance == b.provenance
        np.testing.assert_array_equal(a.pixels, b.pixels)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest[frame_filename(Fraction(1, 4))]["provenance"] == "synthetic"

    build_augmented_dataset(seq, AugmentationPlan(3), "hybrid", out_dir=tmp_path / "b")
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
