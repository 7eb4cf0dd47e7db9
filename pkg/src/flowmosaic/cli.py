"""Command line entry point: simulate, augment, mosaic, analyze, experiment."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import analytics, experiment
from . import synthfield as sf
from .config import RunConfig
from .dataset import estimate_overlap, load_dataset, save_png
from .errors import FlowMosaicError, ValidationError
from .interp import AugmentMode, build_augmented_dataset, pseudo_overlap
from .flow import parse_flow_backend
from .mosaic import mosaic_rmse
from .pipeline import mosaic_sequence

log = logging.getLogger("flowmosaic")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def effective_config(args):
    """Config file (if any) with command line flags applied on top."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["experiment.seeds"] = [args.seed]
    if getattr(args, "seeds", None):
        overrides["experiment.seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.flow_backend is not None:
        overrides["flow.backend"] = args.flow_backend
    if args.mode is not None:
        overrides["augment.mode"] = args.mode
    if args.out is not None:
        overrides["output"] = args.out
    if args.threads is not None:
        overrides["threads"] = args.threads
    if getattr(args, "input", None) is not None:
        overrides["input"] = args.input
    if getattr(args, "front_overlap", None) is not None:
        overrides["simulation.front_overlap"] = args.front_overlap
    if getattr(args, "n", None) is not None:
        overrides["augment.n_intermediate"] = args.n
    return cfg.with_overrides(overrides) if overrides else cfg


def _need_input(cfg):
    if not cfg.input:
        raise ValidationError("an input path is required")
    return Path(cfg.input)


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(cfg):
    sim = cfg.simulation
    intr = sf.default_intrinsics(sim.image_size)
    fm = sf.generate_field(cfg.seed, size=(sim.field_width, sim.field_height), meters_per_texel=sim.meters_per_texel)
    plan = sf.plan_flight(fm, intr, sim.altitude, sim.front_overlap, sim.side_overlap)
    frames, truths = sf.render_flight(fm, plan, intr, sim.noise_sigma)
    out = sf.write_simulation(cfg.output, fm, plan, intr, frames, truths)
    print(f"simulated {len(frames)} frames in {plan.legs} legs -> {out}")
    return EXIT_OK


def _mean_overlap(seq):
    vals = [estimate_overlap(seq[i], seq[j]) for i, j in seq.adjacent_pairs(within_leg=True)]
    return float(np.mean(vals)) if vals else 0.0


def cmd_augment(cfg):
    src = _need_input(cfg)
    seq = load_dataset(src)
    out = Path(cfg.output)
    o = _mean_overlap(seq)
    n = cfg.augment.n_intermediate
    if cfg.augment.mode == "baseline" or n == 0:
        if out.resolve() != src.resolve():
            _copy_dataset(src, out)
        print(f"frames: {len(seq)} (unchanged)")
        print(f"overlap: {100 * o:.1f}%  pseudo-overlap: {100 * o:.1f}%")
        return EXIT_OK
    with experiment.make_executor(cfg.threads) as ex:
        result = build_augmented_dataset(
            seq,
            cfg.augment.plan(),
            AugmentMode(cfg.augment.mode),
            out_dir=out,
            params=cfg.flow.params(),
            backend=parse_flow_backend(cfg.flow.backend),
            executor=ex,
        )
    print(f"frames: {len(seq)} original -> {len(result)} {cfg.augment.mode}")
    print(f"overlap: {100 * o:.1f}%  pseudo-overlap: {100 * pseudo_overlap(o, n):.1f}%")
    return EXIT_OK


def _copy_dataset(src, out):
    out.mkdir(parents=True, exist_ok=True)
    for p in sorted(src.iterdir()):
        if p.is_file():
            shutil.copy2(p, out / p.name)
    if (src / "frames").is_dir():
        shutil.copytree(src / "frames", out / "frames", dirs_exist_ok=True)


def cmd_mosaic(cfg, truth=None, mode=None):
    """Mosaic the dataset as stored; ``mode`` synthetic/hybrid augments it
    in memory first."""
    src = _need_input(cfg)
    seq = load_dataset(src, min_frames=1)
    if mode in ("synthetic", "hybrid") and len(seq) > 1:
        seq = build_augmented_dataset(
            seq, cfg.augment.plan(), AugmentMode(mode), params=cfg.flow.params(), backend=parse_flow_backend(cfg.flow.backend)
        )
    with experiment.make_executor(cfg.threads) as ex:
        result = mosaic_sequence(
            seq.frames,
            cfg.mosaic.ransac(cfg.seed),
            cfg.mosaic.max_features,
            cfg.mosaic.min_overlap,
            cfg.mosaic.scale,
            executor=ex,
            refine=cfg.mosaic.refine,
        )
    out = Path(cfg.output)
    result.canvas.save(out)
    h, w = result.canvas.pixels.shape[:2]
    print(f"mosaic {w}x{h} from {len(seq)} frames -> {out / 'mosaic.png'}")
    stats = result.inlier_stats()
    print(f"pairs: {stats['pairs']}  mean inliers: {stats['mean_inliers']:.1f}")
    if truth is not None:
        field, _ = sf.load_truth(truth or src)
        anchor = seq[result.anchor]
        c2t = sf.view_homography(field, anchor.geotag, anchor.intrinsics) @ result.canvas.canvas_to_anchor
        print(f"mosaic_rmse: {mosaic_rmse(result.canvas, field.texture, c2t):.4f}")
    return EXIT_OK


def _load_rgb(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64)


def cmd_analyze(cfg, nir=None):
    src = _need_input(cfg)
    out = Path(cfg.output)
    if src.is_dir() and not (src / "mosaic.png").exists():
        seq = load_dataset(src, min_frames=1)
        by_kind = {}
        for f in seq.frames:
            by_kind.setdefault(f.provenance.value, []).append(analytics.compute_gsd(f.intrinsics, f.geotag.altitude_agl)[0])
        for kind, vals in sorted(by_kind.items()):
            print(f"{kind}: {len(vals)} frames, mean GSD {np.mean(vals):.3f} cm/px")
        return EXIT_OK
    image = src / "mosaic.png" if src.is_dir() else src
    rgb = _load_rgb(image)
    valid = rgb.sum(axis=2) > 0
    nir_band = None
    if nir is not None:
        with Image.open(nir) as img:
            nir_band = np.asarray(img.convert("L"), dtype=np.float64)
    bands = analytics.SpectralBands.from_rgb(rgb, nir_band)
    hmap = analytics.health_map(bands)
    hmap.valid = valid
    hmap, colour = analytics.classify_health(hmap, cfg.health_thresholds)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "health.png", colour)
    analytics.write_index_raw(out / "health.ofhm", hmap.index)
    idx = hmap.index[valid]
    fractions = np.bincount(hmap.classes[valid], minlength=len(cfg.health_thresholds) + 1) / max(idx.size, 1)
    print(f"{hmap.kind.value}: mean {idx.mean():.4f}  min {idx.min():.4f}  max {idx.max():.4f}")
    print("class fractions: " + " ".join(f"{v:.3f}" for v in fractions))
    return EXIT_OK


def cmd_experiment(cfg):
    out = Path(cfg.output)
    report = experiment.run_experiment(cfg, out)
    path = experiment.write_report(out / "report.json", report)
    s = report.summary
    for entry in report.results:
        row = "  ".join(
            f"{m}={v['mosaic_rmse']:.4f}" if v["mosaic_rmse"] is not None else f"{m}=n/a" for m, v in entry["variants"].items()
        )
        print(f"seed {entry['seed']}: frames " + "/".join(str(v["frame_count"]) for v in entry["variants"].values()) + f"  rmse {row}")
    if "hybrid_le_baseline" in s:
        print(f"hybrid <= baseline in {s['hybrid_le_baseline']}/{s['scenes_with_truth']} scenes")
    print(f"report -> {path} ({report.determinism_hash()[:12]})")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed (u64)")
    common.add_argument("--flow-backend", help="'internal' or 'external:<dir>' with precomputed .ofuf flows")
    common.add_argument("--mode", choices=("baseline", "synthetic", "hybrid"), help="dataset composition")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. mosaic.min_overlap=0.3")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="flowmosaic", description="Flow-interpolated orthomosaics from sparse UAV imagery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic field survey with ground truth")
    p.add_argument("--front-overlap", type=float)

    p = sub.add_parser("augment", parents=[common], help="insert synthetic intermediate frames")
    p.add_argument("input", help="dataset directory")
    p.add_argument("-n", type=int, help="synthetic frames per adjacent pair")

    p = sub.add_parser("mosaic", parents=[common], help="register and blend a dataset into an orthomosaic")
    p.add_argument("input", help="dataset directory")
    p.add_argument("--truth", nargs="?", const="", help="simulation directory holding truth/ (default: the input)")

    p = sub.add_parser("analyze", parents=[common], help="health map of a mosaic, or GSD of a dataset")
    p.add_argument("input", help="mosaic directory, image, or dataset directory")
    p.add_argument("--nir", help="co-registered near-infrared image; enables NDVI")

    p = sub.add_parser("experiment", parents=[common], help="baseline / synthetic / hybrid comparison")
    p.add_argument("--input", help="real dataset directory instead of simulated scenes")
    p.add_argument("--seeds", help="comma separated scene seeds")
    p.add_argument("--front-overlap", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
    except (ValidationError, FlowMosaicError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "augment":
            return cmd_augment(cfg)
        if args.command == "mosaic":
            return cmd_mosaic(cfg, args.truth, args.mode)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.nir)
        return cmd_experiment(cfg)
    except FlowMosaicError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
