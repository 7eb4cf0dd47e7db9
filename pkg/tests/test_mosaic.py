import json

import numpy as np
import pytest
from PIL import Image

from flowmosaic import synthfield as sf
from flowmosaic.errors import DegenerateConfiguration, DisconnectedChain, EmptyInput, InsufficientMatches, NoOverlap
from flowmosaic.mosaic import (
    FeatureSet,
    Homography,
    apply_homography,
    chain_registration,
    detect_features,
    estimate_homography,
    match_features,
    mosaic_rmse,
    refine_transforms,
    render_mosaic,
)
from flowmosaic.mosaic.homography import symmetric_transfer_error
from flowmosaic.mosaic.registration import candidate_pairs, register_pair
from flowmosaic.pipeline import mosaic_sequence
from helpers import make_frame


def translation(tx, ty=0.0):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def known_h():
    return np.array([[1.02, 0.05, 12.0], [-0.04, 0.98, -7.0], [1e-4, -5e-5, 1.0]])


# -- features ------------------------------------------------------------------


def test_constant_image_has_no_features():
    assert len(detect_features(np.full((64, 64), 100, np.uint8))) == 0


def test_checkerboard_corners_on_grid():
    yy, xx = np.mgrid[0:120, 0:120]
    cb = (((xx // 10) + (yy // 10)) % 2 * 200 + 20).astype(np.uint8)
    fs = detect_features(cb, 500)
    assert len(fs) > 40
    # square edges sit between pixel centres 10k-1 and 10k
    grid = np.round((fs.xy + 0.5) / 10) * 10 - 0.5
    assert np.abs(fs.xy - grid).max() <= 1.0
    assert (fs.xy >= 15).all() and (fs.xy <= 120 - 16).all()


def test_max_count_truncates_sorted(flight):
    _, frames, _ = flight
    fs = detect_features(frames[0], 100)
    assert len(fs) == 100
    assert np.all(np.diff(fs.response) <= 0)
    assert fs.descriptors.shape == (100, 32) and fs.descriptors.dtype == np.uint8


def test_self_match_is_identity(flight):
    fs = detect_features(flight[1][0], 300)
    m = match_features(fs, fs)
    assert len(m) == len(fs)
    assert (m[:, 0] == m[:, 1]).all() and (m[:, 2] == 0).all()


def test_random_descriptors_rarely_match():
    rng = np.random.default_rng(0)

    def rand(n):
        return FeatureSet(np.zeros((n, 2)), np.ones(n), np.zeros(n), rng.integers(0, 256, (n, 32), dtype=np.uint8))

    assert len(match_features(rand(200), rand(200))) <= 4


def test_distractors_do_not_steal_matches():
    rng = np.random.default_rng(1)
    base = rng.integers(0, 256, (30, 32), dtype=np.uint8)
    extra = []
    while len(extra) < 10:
        cand = rng.integers(0, 256, 32, dtype=np.uint8)
        if np.unpackbits(base ^ cand, axis=1).sum(axis=1).min() >= 64:
            extra.append(cand)
    a = FeatureSet(np.zeros((30, 2)), np.ones(30), np.zeros(30), base)
    b = FeatureSet(np.zeros((40, 2)), np.ones(40), np.zeros(40), np.vstack([base, extra]))
    m = match_features(a, b)
    assert sorted(m[:, 0].tolist()) == list(range(30))
    assert (m[:, 0] == m[:, 1]).all()


# -- homographies --------------------------------------------------------------


def test_exact_four_points():
    src = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 80.0], [0.0, 80.0]])
    h = known_h()
    est = estimate_homography(src, apply_homography(h, src))
    assert symmetric_transfer_error(est.h, src, apply_homography(h, src)).max() < 1e-6
    np.testing.assert_allclose(est.h, h / h[2, 2], atol=1e-8)


def test_collinear_and_too_few():
    line = np.stack([np.arange(6.0), 2 * np.arange(6.0)], axis=1)
    with pytest.raises(DegenerateConfiguration):
        estimate_homography(line, line + 1)
    with pytest.raises(InsufficientMatches):
        estimate_homography(line[:3], line[:3])


def _noisy_set(seed, n=100, outlier_frac=0.3, noise=0.5):
    rng = np.random.default_rng(seed)
    h = known_h()
    src = rng.uniform(0, 500, (n, 2))
    dst = apply_homography(h, src) + rng.uniform(-noise, noise, (n, 2))
    k = int(round(outlier_frac * n))
    out_idx = rng.choice(n, k, replace=False)
    dst[out_idx] = rng.uniform(0, 500, (k, 2))
    truth = np.ones(n, bool)
    truth[out_idx] = False
    return src, dst, h, truth


def test_ransac_with_outliers_recovers_all_inliers():
    src, dst, h, truth = _noisy_set(3)
    est = estimate_homography(src, dst, threshold=1.5, seed=0)
    assert est.inliers[truth].all()
    gt_rms = np.sqrt(np.mean(np.sum((apply_homography(est.h, src[truth]) - apply_homography(h, src[truth])) ** 2, axis=1)))
    assert gt_rms < 0.5
    assert est.inlier_rms < 0.5


def test_ransac_is_deterministic():
    src, dst, _, _ = _noisy_set(4)
    a = estimate_homography(src, dst, seed=9)
    b = estimate_homography(src, dst, seed=9)
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_array_equal(a.inliers, b.inliers)


def test_scale_covariance():
    src, dst, _, _ = _noisy_set(5)
    s = 2.5
    a = estimate_homography(src, dst, seed=0)
    b = estimate_homography(src * s, dst * s, threshold=1.5 * s, seed=0)
    S = np.diag([s, s, 1.0])
    expected = S @ a.h @ np.linalg.inv(S)
    expected /= expected[2, 2]
    probe = np.random.default_rng(0).uniform(0, 500 * s, (50, 2))
    diff = np.hypot(*(apply_homography(expected, probe) - apply_homography(b.h, probe)).T)
    assert diff.max() < max(a.inlier_rms * s, 1e-6) * 3
    np.testing.assert_array_equal(a.inliers, b.inliers)


def test_truth_composition_matches_estimate(field, intr, flight):
    _, frames, truths = flight
    fa, fb = detect_features(frames[0]), detect_features(frames[1])
    est = register_pair(fa, fb, (0, 1))
    rel = np.linalg.inv(truths[1].h) @ truths[0].h
    pts = np.array([[x, y] for x in (40, 256, 470) for y in (40, 256, 470)], float)
    err = symmetric_transfer_error(est.h, pts, apply_homography(rel, pts))
    assert err.max() < 0.5


# -- chaining ------------------------------------------------------------------


def hom(h, i, j, inliers=100):
    return Homography(h, inliers, 0.1, (i, j))


def test_identity_chain():
    t = chain_registration([hom(np.eye(3), k, k + 1) for k in range(4)], 5)
    assert all(np.allclose(x, np.eye(3)) for x in t)


def test_translation_partial_sums():
    tk = [3.0, -5.0, 7.5, 2.0]
    # pair (k, k+1) maps frame k into frame k+1 pixels
    pairs = [hom(translation(tk[k]), k, k + 1) for k in range(4)]
    t = chain_registration(pairs, 5, anchor=2)
    # frame k into anchor 2
    assert t[2][0, 2] == 0.0
    assert t[1][0, 2] == pytest.approx(tk[1])
    assert t[0][0, 2] == pytest.approx(tk[0] + tk[1])
    assert t[3][0, 2] == pytest.approx(-tk[2])
    assert t[4][0, 2] == pytest.approx(-tk[2] - tk[3])
    assert chain_registration(pairs, 5)[2].tolist() == np.eye(3).tolist()


def test_missing_pair_disconnects():
    with pytest.raises(DisconnectedChain):
        chain_registration([hom(np.eye(3), 0, 1), hom(np.eye(3), 2, 3)], 4)


def test_reanchoring_identity():
    rng = np.random.default_rng(2)
    pairs = []
    for k in range(5):
        h = np.eye(3)
        h[:2, :2] += rng.normal(0, 0.02, (2, 2))
        h[:2, 2] = rng.normal(0, 30, 2)
        pairs.append(hom(h, k, k + 1))
    k_anchor, j_anchor = 1, 4
    tk = chain_registration(pairs, 6, k_anchor)
    tj = chain_registration(pairs, 6, j_anchor)
    # re-anchor at j: T_j(x) = T_k(j)^-1 T_k(x)
    inv = np.linalg.inv(tk[j_anchor])
    for a, b in zip(tj, tk):
        c = inv @ b
        np.testing.assert_allclose(a / a[2, 2], c / c[2, 2], atol=1e-9)


def test_candidate_pairs_include_consecutive(flight):
    _, frames, _ = flight
    pairs = candidate_pairs(frames, 0.2)
    assert all((k, k + 1) in pairs for k in range(len(frames) - 1))


def test_refinement_fixes_a_perturbed_chain():
    rng = np.random.default_rng(3)
    true = [translation(40.0 * k, 5.0 * k) for k in range(5)]
    pairs = []
    for i in range(5):
        for j in range(i + 1, min(i + 3, 5)):
            rel = np.linalg.inv(true[j]) @ true[i]
            src = rng.uniform(0, 200, (60, 2))
            h = hom(rel, i, j, 60)
            h.matches = (src, apply_homography(rel, src) + rng.normal(0, 0.05, (60, 2)))
            pairs.append(h)
    anchor = 2
    ref = [np.linalg.inv(true[anchor]) @ t for t in true]
    start = [r.copy() for r in ref]
    start[0] = start[0] @ translation(3.0, -2.0)
    start[4] = start[4] @ np.array([[1.01, 0.0, 0.0], [0.0, 0.99, 0.0], [1e-5, 0.0, 1.0]])
    out = refine_transforms(pairs, start, anchor, (200, 200))
    probe = np.array([[0.0, 0.0], [200.0, 200.0], [100.0, 50.0]])
    for a, b in zip(out, ref):
        assert np.abs(apply_homography(a, probe) - apply_homography(b, probe)).max() < 0.1
    np.testing.assert_array_equal(out[anchor], np.eye(3))


# -- rendering -----------------------------------------------------------------


def test_single_frame_canvas_equals_frame():
    img = np.random.default_rng(0).integers(0, 255, (40, 50, 3), dtype=np.uint8)
    c = render_mosaic([make_frame(img)], [np.eye(3)])
    assert c.pixels.shape[:2] == (40, 50)
    cov = c.covered
    assert cov.all()
    np.testing.assert_allclose(c.pixels, img, atol=1e-9)
    assert (c.weight >= 0).all()


def test_two_identical_frames_cancel():
    img = np.random.default_rng(1).integers(0, 255, (40, 50, 3), dtype=np.uint8)
    c = render_mosaic([make_frame(img), make_frame(img)], [np.eye(3), np.eye(3)])
    np.testing.assert_allclose(c.pixels, img, atol=1e-9)


def test_render_order_invariant(flight):
    _, frames, truths = flight
    t = [np.linalg.inv(truths[2].h) @ x.h for x in truths]
    a = render_mosaic(frames, t, anchor=2)
    perm = list(np.random.default_rng(0).permutation(len(frames)))[::-1]
    b = render_mosaic([frames[i] for i in perm], [t[i] for i in perm], anchor=perm.index(2))
    assert np.array_equal(a.pixels, b.pixels) and np.array_equal(a.weight, b.weight)


def test_truth_transforms_give_low_rmse(field, flight):
    _, frames, truths = flight
    anchor = len(frames) // 2
    t = [np.linalg.inv(truths[anchor].h) @ x.h for x in truths]
    c = render_mosaic(frames, t, anchor=anchor)
    assert mosaic_rmse(c, field.texture, truths[anchor].h @ c.canvas_to_anchor) < 2.0


def test_mosaic_rmse_identity_and_offset():
    truth = np.random.default_rng(3).uniform(10, 200, (60, 70, 3))
    c = render_mosaic([make_frame(truth.astype(np.uint8))], [np.eye(3)])
    crop = truth.astype(np.uint8).astype(float)
    assert mosaic_rmse(c, crop, np.eye(3)) == pytest.approx(0.0, abs=1e-9)
    assert mosaic_rmse(c, crop - 5.0, np.eye(3)) == pytest.approx(5.0, abs=1e-9)
    with pytest.raises(NoOverlap):
        mosaic_rmse(c, crop, translation(1000, 0))


def test_empty_input():
    with pytest.raises(EmptyInput):
        render_mosaic([], [])


def test_pipeline_and_canvas_outputs(tmp_path, field, flight):
    _, frames, truths = flight
    res = mosaic_sequence(frames)
    a = frames[res.anchor]
    assert res.anchor == (len(frames) - 1) // 2
    c2t = truths[res.anchor].h @ res.canvas.canvas_to_anchor
    assert mosaic_rmse(res.canvas, field.texture, c2t) < 2.5
    res.canvas.save(tmp_path, weight_png=True)
    geo = json.loads((tmp_path / "georef.json").read_text())
    assert set(geo) >= {"origin_lat", "origin_lon", "scale_m_per_px"}
    assert geo["scale_m_per_px"] == pytest.approx(a.intrinsics.gsd(15.0)[0])
    with Image.open(tmp_path / "mosaic_weight.png") as w:
        assert w.mode.startswith("I;16") or w.mode == "I"


def test_disconnected_sequence(flight):
    _, frames, _ = flight
    blank = make_frame(np.full((512, 512, 3), 128, np.uint8), lat=41.0, lon=-83.0)
    blank.intrinsics = frames[0].intrinsics
    with pytest.raises(DisconnectedChain):
        mosaic_sequence([frames[0], frames[1], blank])
