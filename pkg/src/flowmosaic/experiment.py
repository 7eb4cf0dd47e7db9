"""Baseline / synthetic / hybrid comparison under one shared configuration."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analytics
from . import synthfield as sf
from .dataset import CameraIntrinsics, Provenance, estimate_overlap, load_dataset, order_flight_sequence, save_png
from .errors import WriteError
from .flow import luminance, parse_flow_backend
from .interp import build_augmented_dataset, pseudo_overlap
from .mosaic import mosaic_rmse, resample_canvas
from .pipeline import mosaic_sequence

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VARIANTS = ("baseline", "synthetic", "hybrid")
# report keys that depend on the wall clock and stay out of the hash
TIMING_KEYS = ("timings",)
# execution settings that must not change any result
EXECUTION_KEYS = ("threads", "output")


@dataclass
class Scene:
    seq: object  # FrameSequence of original frames
    front_overlap: Optional[float] = None
    field: Optional[object] = None  # FieldModel when simulated
    intrinsics: Optional[CameraIntrinsics] = None

    @property
    def has_truth(self):
        return self.field is not None


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    results: list
    summary: dict
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "seeds": list(self.seeds),
            "results": self.results,
            "summary": self.summary,
            "timings": self.timings,
        }

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def determinism_hash(self):
        return report_hash(self.to_dict())


def report_hash(report):
    """SHA-256 of the canonical report with timings and execution settings removed."""
    body = {k: v for k, v in report.items() if k not in TIMING_KEYS}
    if isinstance(body.get("config"), dict):
        body["config"] = {k: v for k, v in body["config"].items() if k not in EXECUTION_KEYS}
    text = json.dumps(_jsonable(body), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    """Floats stay floats; inf/nan become explicit string sentinels."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@contextmanager
def make_executor(threads):
    if threads <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=threads) as ex:
        yield ex


# -- scenes --------------------------------------------------------------------


def simulate_scene(cfg, seed, front_overlap=None):
    sim = cfg.simulation
    o = sim.front_overlap if front_overlap is None else front_overlap
    intr = sf.default_intrinsics(sim.image_size)
    fm = sf.generate_field(seed, size=(sim.field_width, sim.field_height), meters_per_texel=sim.meters_per_texel)
    plan = sf.plan_flight(fm, intr, sim.altitude, o, sim.side_overlap)
    frames, _ = sf.render_flight(fm, plan, intr, sim.noise_sigma)
    return Scene(order_flight_sequence(frames), o, fm, intr)


def load_scene(path):
    return Scene(load_dataset(path))


def build_variant(scene, cfg, mode, executor=None):
    """Dataset composition for one variant; everything else is shared."""
    if mode == "baseline":
        return scene.seq
    return build_augmented_dataset(
        scene.seq,
        cfg.augment.plan(),
        mode,
        params=cfg.flow.params(),
        backend=parse_flow_backend(cfg.flow.backend),
        executor=executor,
    )


# -- metrics -------------------------------------------------------------------


def mean_pseudo_overlap(seq):
    """Mean GPS-predicted overlap of consecutive frames within each leg."""
    vals = [estimate_overlap(seq[i], seq[j]) for i, j in seq.adjacent_pairs(within_leg=True)]
    return float(np.mean(vals)) if vals else float("nan")


def mean_gsd_cm(seq):
    return float(np.mean([analytics.compute_gsd(f.intrinsics, f.geotag.altitude_agl)[0] for f in seq.frames]))


def interpolation_scores(scene, seq):
    """PSNR (RGB) and SSIM (luminance) of every synthetic frame against a
    noise-free render at its interpolated pose."""
    synth = [f for f in seq.frames if f.provenance == Provenance.SYNTHETIC]
    if not synth or not scene.has_truth:
        return None
    p, s = [], []
    for f in synth:
        truth, _ = sf.render_view(scene.field, f.geotag, scene.intrinsics, 0.0)
        p.append(analytics.psnr(f.pixels.astype(np.float64), truth.pixels.astype(np.float64)))
        s.append(analytics.ssim(luminance(f.pixels), luminance(truth.pixels)))
    return {"frames": len(synth), "psnr_mean": float(np.mean(p)), "psnr_min": float(np.min(p)), "ssim_mean": float(np.mean(s))}


def truth_rmse(scene, seq, result):
    if not scene.has_truth:
        return None
    anchor = seq[result.anchor]
    c2t = sf.view_homography(scene.field, anchor.geotag, scene.intrinsics) @ result.canvas.canvas_to_anchor
    return mosaic_rmse(result.canvas, scene.field.texture, c2t)


def health_of(canvas, thresholds):
    bands = analytics.SpectralBands.from_rgb(canvas.pixels)
    hmap = analytics.vari(bands)
    hmap.valid = canvas.covered
    return analytics.classify_health(hmap, thresholds)


def health_agreement(canvas_a, canvas_b):
    """Mean |VARI_a - VARI_b| over pixels both mosaics cover, on b's grid."""
    vals, valid = resample_canvas(canvas_a, canvas_b)
    joint = valid & canvas_b.covered
    if not joint.any():
        return {"pixels": 0, "mean_abs_diff": float("nan")}
    ia = analytics.vari(analytics.SpectralBands.from_rgb(vals)).index
    ib = analytics.vari(analytics.SpectralBands.from_rgb(canvas_b.pixels)).index
    d = np.abs(ia - ib)[joint]
    return {
        "pixels": int(joint.sum()),
        "mean_abs_diff": float(d.mean()),
        "index_min": float(min(ia[joint].min(), ib[joint].min())),
        "index_max": float(max(ia[joint].max(), ib[joint].max())),
    }


def assert_isolation(configs):
    """Variants may differ only in dataset composition."""
    stripped = []
    for c in configs.values():
        d = c.to_dict()
        d["augment"] = {k: v for k, v in d["augment"].items() if k != "mode"}
        stripped.append(json.dumps(d, sort_keys=True))
    if len(set(stripped)) != 1:
        raise AssertionError("experiment variants differ in more than dataset composition")


def _originals_identical(a, b):
    ao = [f for f in a.frames if f.provenance == Provenance.ORIGINAL]
    bo = [f for f in b.frames if f.provenance == Provenance.ORIGINAL]
    return len(ao) == len(bo) and all(np.array_equal(x.pixels, y.pixels) for x, y in zip(ao, bo))


# -- runner --------------------------------------------------------------------


def run_variant(scene, cfg, mode, seed, executor=None, out_dir=None):
    timings = {}
    t0 = time.perf_counter()
    seq = build_variant(scene, cfg, mode, executor)
    timings["augment_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = mosaic_sequence(
        seq.frames,
        cfg.mosaic.ransac(seed),
        cfg.mosaic.max_features,
        cfg.mosaic.min_overlap,
        cfg.mosaic.scale,
        executor=executor,
        refine=cfg.mosaic.refine,
    )
    timings["mosaic_s"] = time.perf_counter() - t0
    hmap, rgb = health_of(result.canvas, cfg.health_thresholds)
    metrics = {
        "mode": mode,
        "frame_count": len(seq),
        "original_frames": sum(f.provenance == Provenance.ORIGINAL for f in seq.frames),
        "mean_pseudo_overlap": mean_pseudo_overlap(seq),
        "mean_gsd_cm": mean_gsd_cm(seq),
        "mosaic_rmse": truth_rmse(scene, seq, result),
        "interpolation": interpolation_scores(scene, seq),
        "inliers": result.inlier_stats(),
        "canvas_shape": list(result.canvas.pixels.shape[:2]),
        "health": {
            "kind": hmap.kind.value,
            "class_fractions": _class_fractions(hmap, len(cfg.health_thresholds) + 1),
        },
    }
    if scene.front_overlap is not None and mode != "baseline":
        metrics["nominal_pseudo_overlap"] = pseudo_overlap(scene.front_overlap, cfg.augment.n_intermediate)
    if out_dir is not None:
        d = Path(out_dir) / mode
        try:
            result.canvas.save(d)
            save_png(d / "health.png", rgb)
            analytics.write_index_raw(d / "health.ofhm", hmap.index)
        except OSError as exc:
            raise WriteError(f"{d}: {exc}") from exc
    return metrics, seq, result, timings


def _class_fractions(hmap, n_classes):
    cls = hmap.classes[hmap.valid] if hmap.valid is not None else hmap.classes.ravel()
    if cls.size == 0:
        return [0.0] * n_classes
    return [float(v) for v in np.bincount(cls, minlength=n_classes) / cls.size]


def run_seed(cfg, seed, scene=None, executor=None, out_dir=None):
    seed_dir = None if out_dir is None else Path(out_dir) / f"seed_{seed}"
    scene = scene or simulate_scene(cfg, seed)
    configs = {m: cfg.variant(m) for m in VARIANTS}
    assert_isolation(configs)
    variants, results, seqs, timings = {}, {}, {}, {}
    for mode in VARIANTS:
        variants[mode], seqs[mode], results[mode], timings[mode] = run_variant(
            scene, configs[mode], mode, seed, executor, seed_dir
        )
    if not _originals_identical(seqs["baseline"], seqs["hybrid"]):
        raise AssertionError("hybrid originals differ from the baseline frames")

    sweep = []
    if scene.has_truth:
        for o in cfg.experiment.overlap_sweep:
            t0 = time.perf_counter()
            other = simulate_scene(cfg, seed, o)
            m, _, _, _ = run_variant(other, cfg.variant("baseline"), "baseline", seed, executor)
            sweep.append({"front_overlap": o, "frame_count": m["frame_count"], "mosaic_rmse": m["mosaic_rmse"], "inliers": m["inliers"]})
            timings[f"baseline_overlap_{o:.2f}"] = {"total_s": time.perf_counter() - t0}

    agreement = health_agreement(results["baseline"].canvas, results["hybrid"].canvas)
    entry = {
        "seed": seed,
        "front_overlap": scene.front_overlap,
        "variants": variants,
        "overlap_sweep": sweep,
        "health_agreement": agreement,
    }
    return entry, timings


def summarize(entries):
    rows = [e for e in entries if e["variants"]["baseline"]["mosaic_rmse"] is not None]
    out = {"scenes": len(entries), "scenes_with_truth": len(rows)}
    if not rows:
        return out
    rm = {m: [e["variants"][m]["mosaic_rmse"] for e in rows] for m in VARIANTS}
    out["mean_mosaic_rmse"] = {m: float(np.mean(v)) for m, v in rm.items()}
    out["hybrid_le_baseline"] = sum(h <= b for h, b in zip(rm["hybrid"], rm["baseline"]))
    versus = {}
    for e in rows:
        for s in e["overlap_sweep"]:
            key = f"{s['front_overlap']:.2f}"
            ok = e["variants"]["hybrid"]["mosaic_rmse"] <= 1.1 * s["mosaic_rmse"]
            versus[key] = versus.get(key, 0) + int(ok)
    out["hybrid_within_10pct_of_denser_baseline"] = versus
    out["mean_health_abs_diff"] = float(np.mean([e["health_agreement"]["mean_abs_diff"] for e in rows]))
    return out


def run_experiment(cfg, out_dir=None):
    """Run every configured seed and return an :class:`ExperimentReport`.

    With ``cfg.input`` set the frames come from that dataset directory (one
    scene, no truth-based metrics); otherwise each seed is simulated.
    """
    seeds = list(cfg.experiment.seeds) if cfg.input is None else [cfg.seed]
    entries, timings = [], {}
    t_all = time.perf_counter()
    with make_executor(cfg.threads) as ex:
        for seed in seeds:
            scene = load_scene(cfg.input) if cfg.input is not None else None
            entry, t = run_seed(cfg, seed, scene, ex, out_dir if cfg.experiment.write_outputs else None)
            entries.append(entry)
            timings[f"seed_{seed}"] = t
    timings["total_s"] = time.perf_counter() - t_all
    return ExperimentReport(cfg.to_dict(), seeds, entries, summarize(entries), timings)


def write_report(path, report):
    """Atomic write: a partial report never appears at ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(report.to_json())
        os.replace(tmp, path)
    except OSError as exc:
        raise WriteError(f"{path}: {exc}") from exc
    return path


__all__ = [
    "ExperimentReport",
    "Scene",
    "health_agreement",
    "report_hash",
    "run_experiment",
    "run_seed",
    "simulate_scene",
    "write_report",
]
