"""Deterministic agricultural-field simulator: texture, lawnmower flight
plans, nadir renders with exact pixel-to-texel transforms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .dataset import CameraIntrinsics, GeoTag, ImageFrame, LocalTangent, Provenance, save_png
from .errors import FootprintTooLarge, OutOfField, ValidationError
from .interp import interpolate_geotag
from .mosaic.homography import Homography, apply_homography

DEFAULT_ORIGIN = (40.0, -83.0)
SOIL_RGB = np.array([118.0, 92.0, 66.0])
CROP_RGB = np.array([58.0, 132.0, 44.0])
STRESSED_RGB = np.array([168.0, 150.0, 72.0])


def default_intrinsics(size=512):
    """Square 4 mm lens on a 2.048 mm sensor: 1.5 cm GSD at 15 m over 512 px."""
    side = 2.048e-3 * size / 512.0
    return CameraIntrinsics(4.0e-3, side, side, size, size)


@dataclass
class FieldModel:
    texture: np.ndarray  # (H, W, 3) float32, north up, NW corner at ``origin``
    meters_per_texel: float
    seed: int
    row_spacing: float
    row_direction: float
    origin: tuple = DEFAULT_ORIGIN  # lat, lon of the field's NW corner

    @property
    def tangent(self):
        return LocalTangent(*self.origin)

    @property
    def extent_m(self):
        h, w = self.texture.shape[:2]
        return w * self.meters_per_texel, h * self.meters_per_texel

    def geo_to_texel(self, lat, lon):
        # texel centres sit half a texel inside the field edge
        east, north = self.tangent.to_local(lat, lon)
        return east / self.meters_per_texel - 0.5, -north / self.meters_per_texel - 0.5

    def texel_to_geo(self, tx, ty):
        m = self.meters_per_texel
        return self.tangent.to_geo((np.asarray(tx) + 0.5) * m, -(np.asarray(ty) + 0.5) * m)


@dataclass
class FlightPlan:
    poses: list  # GeoTag per exposure, nadir camera, yaw = heading
    front_overlap: float
    side_overlap: float
    legs: int
    leg_of_pose: list = field(default_factory=list)
    along_spacing: float = 0.0
    leg_spacing: float = 0.0


def _band_noise(rng, shape, sigma):
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    sd = n.std()
    return n / sd if sd > 0 else n


def generate_field(
    seed,
    size=2048,
    meters_per_texel=0.01,
    row_spacing=0.75,
    row_direction=0.0,
    n_patches=6,
    detail=10.0,
    origin=DEFAULT_ORIGIN,
):
    """Crop rows over soil, modulated by multi-scale vigour noise, with
    elliptical stressed patches. ``size`` is an int or (width, height).

    Every random draw comes from one PCG64 stream seeded with ``seed``.
    """
    w, h = (size, size) if np.isscalar(size) else (int(size[0]), int(size[1]))
    if min(w, h) < 512:
        raise ValidationError("field texture must be at least 512 texels on a side")
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    theta = math.radians(row_direction)
    across = (xx * math.cos(theta) + yy * math.sin(theta)) * meters_per_texel / row_spacing
    profile = 0.5 + 0.5 * np.cos(2.0 * math.pi * across)
    vigour = 0.6 * _band_noise(rng, (h, w), 48.0) + 0.3 * _band_noise(rng, (h, w), 12.0) + 0.1 * _band_noise(rng, (h, w), 4.0)
    cover = np.clip(profile ** 1.5 * (0.75 + 0.25 * vigour) + 0.1 * vigour, 0.0, 1.0)

    stress = np.zeros((h, w))
    for _ in range(n_patches):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        a, b = rng.uniform(40, 220), rng.uniform(30, 140)
        phi = rng.uniform(0, math.pi)
        dx, dy = xx - cx, yy - cy
        u = (dx * math.cos(phi) + dy * math.sin(phi)) / a
        v = (-dx * math.sin(phi) + dy * math.cos(phi)) / b
        stress = np.maximum(stress, np.clip(1.5 - (u * u + v * v), 0.0, 1.0) * rng.uniform(0.5, 1.0))
    plant = CROP_RGB[None, None, :] * (1.0 - stress[..., None]) + STRESSED_RGB[None, None, :] * stress[..., None]
    plant = plant * (0.85 + 0.15 * vigour[..., None])
    soil = SOIL_RGB[None, None, :] * (1.0 + 0.08 * _band_noise(rng, (h, w), 6.0))[..., None]
    tex = cover[..., None] * plant + (1.0 - cover[..., None]) * soil
    grain = _band_noise(rng, (h, w), 1.5)
    tex = tex + detail * grain[..., None]
    tex = np.clip(tex, 0.0, 255.0).astype(np.float32)
    return FieldModel(np.ascontiguousarray(tex), float(meters_per_texel), int(seed), float(row_spacing), float(row_direction), tuple(origin))


def view_homography(field, pose, intr):
    """3x3 map from image pixels of a nadir view at ``pose`` to texels."""
    gx, gy = intr.gsd(pose.altitude_agl)
    m = field.meters_per_texel
    psi = math.radians(pose.heading or 0.0)
    cx_t, cy_t = field.geo_to_texel(pose.latitude, pose.longitude)
    cx, cy = (intr.image_width - 1) / 2.0, (intr.image_height - 1) / 2.0
    c, s = math.cos(psi), math.sin(psi)
    lin = np.array([[gx * c / m, -gy * s / m], [gx * s / m, gy * c / m]])
    h = np.eye(3)
    h[:2, :2] = lin
    h[:2, 2] = np.array([float(cx_t), float(cy_t)]) - lin @ np.array([cx, cy])
    return h


def _footprints(intr, altitude, heading_deg):
    gx, gy = intr.gsd(altitude)
    w_m, h_m = gx * intr.image_width, gy * intr.image_height
    if round(heading_deg) % 180 == 90:
        return h_m, w_m  # along-track, across-track for east/west legs
    return w_m, h_m


def plan_flight(field, intr, altitude=15.0, front_overlap=0.5, side_overlap=0.5, speed=5.0):
    """Serpentine east/west legs over the field.

    Exposures are ``footprint * (1 - front_overlap)`` apart along track and
    legs ``footprint * (1 - side_overlap)`` apart; as many as fit with every
    footprint inside the texture, centred on the field. Leg 0 flies east
    along the northern edge.
    """
    for name, o in (("front_overlap", front_overlap), ("side_overlap", side_overlap)):
        if not 0.0 <= o <= 0.95:
            raise ValidationError(f"{name}={o} outside [0, 0.95]")
    along_fp, across_fp = _footprints(intr, altitude, 90.0)
    width_m, height_m = field.extent_m
    if along_fp > width_m or across_fp > height_m:
        raise FootprintTooLarge(f"footprint {along_fp:.2f}x{across_fp:.2f} m exceeds field {width_m:.2f}x{height_m:.2f} m")
    along = along_fp * (1.0 - front_overlap)
    leg_gap = across_fp * (1.0 - side_overlap)
    n_along = int(math.floor((width_m - along_fp) / along + 1e-9)) + 1
    n_legs = int(math.floor((height_m - across_fp) / leg_gap + 1e-9)) + 1
    margin_e = 0.5 * (width_m - along_fp - (n_along - 1) * along)
    margin_s = 0.5 * (height_m - across_fp - (n_legs - 1) * leg_gap)

    poses, leg_of = [], []
    t = 0.0
    prev = None
    for leg in range(n_legs):
        south = margin_s + 0.5 * across_fp + leg * leg_gap
        cols = range(n_along) if leg % 2 == 0 else range(n_along - 1, -1, -1)
        heading = 90.0 if leg % 2 == 0 else 270.0
        for j in cols:
            east = margin_e + 0.5 * along_fp + j * along
            if prev is not None:
                t += math.hypot(east - prev[0], south - prev[1]) / speed
            prev = (east, south)
            lat, lon = field.tangent.to_geo(east, -south)
            poses.append(GeoTag(float(lat), float(lon), float(altitude), timestamp=t, heading=heading))
            leg_of.append(leg)
    return FlightPlan(poses, front_overlap, side_overlap, n_legs, leg_of, along, leg_gap)


def render_view(field, pose, intr, noise_sigma=0.0, noise_seed=0):
    """Nadir pinhole view of the planar field; returns (frame, truth).

    ``truth`` maps image pixels to texture texels exactly. Noise is drawn
    from a generator seeded by (field seed, noise_seed).
    """
    h_mat = view_homography(field, pose, intr)
    th, tw = field.texture.shape[:2]
    w, h = intr.image_width, intr.image_height
    corners = apply_homography(h_mat, np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float))
    if corners.min() < 0 or corners[:, 0].max() > tw - 1 or corners[:, 1].max() > th - 1:
        raise OutOfField(f"view at ({pose.latitude:.7f}, {pose.longitude:.7f}) leaves the field")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = h_mat[0, 0] * xs + h_mat[0, 1] * ys + h_mat[0, 2]
    ty = h_mat[1, 0] * xs + h_mat[1, 1] * ys + h_mat[1, 2]
    img, _ = kernels.bilinear_sample(field.texture, tx, ty)
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.PCG64([field.seed, int(noise_seed)]))
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    frame = ImageFrame(pixels, pose, intr, Provenance.ORIGINAL)
    return frame, Homography(h_mat)


def render_truth_intermediate(field, pose0, pose1, t, intr):
    """Noise-free view from the pose interpolated at fraction t."""
    frame, _ = render_view(field, interpolate_geotag(pose0, pose1, t), intr, 0.0)
    return frame


def render_flight(field, plan, intr, noise_sigma=2.0):
    """Render every pose; returns (frames, truth homographies)."""
    frames, truths = [], []
    for k, pose in enumerate(plan.poses):
        frame, truth = render_view(field, pose, intr, noise_sigma, noise_seed=k)
        frame.name = f"img_{k:04d}.png"
        frame.sequence_index = None
        frames.append(frame)
        truths.append(truth)
    return frames, truths


def write_simulation(out_dir, field, plan, intr, frames, truths):
    """Dataset directory (images + manifest) plus ``truth/`` ground truth."""
    from .dataset import manifest_entry, write_manifest

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    entries = {}
    for f in frames:
        save_png(out / f.name, f.pixels)
        entries[f.name] = manifest_entry(f)
    write_manifest(out, entries)
    save_png(truth_dir / "field.png", np.clip(np.rint(field.texture), 0, 255).astype(np.uint8))
    np.save(truth_dir / "field.npy", field.texture)
    (truth_dir / "homographies.json").write_text(
        json.dumps({f.name: t.h.tolist() for f, t in zip(frames, truths)}, indent=2, sort_keys=True) + "\n"
    )
    meta = {
        "seed": field.seed,
        "meters_per_texel": field.meters_per_texel,
        "row_spacing": field.row_spacing,
        "row_direction": field.row_direction,
        "origin": list(field.origin),
        "front_overlap": plan.front_overlap,
        "side_overlap": plan.side_overlap,
        "legs": plan.legs,
        "along_spacing_m": plan.along_spacing,
        "leg_spacing_m": plan.leg_spacing,
        "poses": [
            {"lat": p.latitude, "lon": p.longitude, "alt_agl": p.altitude_agl, "timestamp": p.timestamp, "heading": p.heading, "leg": leg}
            for p, leg in zip(plan.poses, plan.leg_of_pose)
        ],
    }
    (truth_dir / "flight.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_truth(sim_dir):
    """Read back ``truth/`` as (FieldModel, {frame name: 3x3 array})."""
    truth_dir = Path(sim_dir) / "truth"
    meta = json.loads((truth_dir / "flight.json").read_text())
    texture = np.load(truth_dir / "field.npy")
    fm = FieldModel(texture, meta["meters_per_texel"], meta["seed"], meta["row_spacing"], meta["row_direction"], tuple(meta["origin"]))
    homs = {k: np.array(v) for k, v in json.loads((truth_dir / "homographies.json").read_text()).items()}
    return fm, homs
