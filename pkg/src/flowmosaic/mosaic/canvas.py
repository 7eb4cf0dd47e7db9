"""Feathered compositing of registered frames onto a georeferenced canvas."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kernels
from ..dataset import GeoTag, LocalTangent, save_png
from ..errors import EmptyInput, FlowMosaicError, NoOverlap
from .homography import apply_homography

MAX_CANVAS_PIXELS = 64_000_000


@dataclass
class MosaicCanvas:
    pixels: np.ndarray  # (H, W, C) float64
    weight: np.ndarray  # (H, W) float64, sum of feather weights
    origin_geo: GeoTag  # ground position of canvas pixel (0, 0)
    scale: float  # metres per canvas pixel
    canvas_to_anchor: np.ndarray  # 3x3, canvas pixel -> anchor-frame pixel
    rotation_deg: float = 0.0  # bearing of the canvas up axis

    @property
    def covered(self):
        return self.weight > 0

    def to_uint8(self):
        return np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)

    def save(self, directory, stem="mosaic", weight_png=False):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rgb = self.to_uint8()
        save_png(directory / f"{stem}.png", rgb)
        georef = {
            "origin_lat": self.origin_geo.latitude,
            "origin_lon": self.origin_geo.longitude,
            "scale_m_per_px": self.scale,
            "rotation_deg": self.rotation_deg,
        }
        (directory / "georef.json").write_text(json.dumps(georef, indent=2, sort_keys=True) + "\n")
        if weight_png:
            wmax = float(self.weight.max()) or 1.0
            w16 = np.rint(self.weight / wmax * 65535.0).astype(np.uint16)
            save_png(directory / f"{stem}_weight.png", w16)


def _corners(w, h):
    return np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])


def _pixel_to_ground(frame, px, py):
    """East/north metres of a frame pixel relative to the frame's nadir point."""
    gx, gy = frame.intrinsics.gsd(frame.geotag.altitude_agl)
    right = (px - (frame.width - 1) / 2.0) * gx
    fwd = -(py - (frame.height - 1) / 2.0) * gy
    psi = math.radians(frame.geotag.heading or 0.0)
    east = right * math.cos(psi) + fwd * math.sin(psi)
    north = -right * math.sin(psi) + fwd * math.cos(psi)
    return east, north


def render_mosaic(frames, transforms, scale=None, anchor=None):
    """Composite frames onto one canvas.

    ``transforms[k]`` maps frame k pixels into anchor-frame pixels. The
    canvas shares the anchor's axes; ``scale`` (metres per canvas pixel)
    defaults to the anchor's ground sample distance. Frames are accumulated
    in sequence order whatever order they are passed in, so the result does
    not depend on the caller's ordering.
    """
    frames = list(frames)
    if not frames:
        raise EmptyInput("no frames to mosaic")
    if len(transforms) != len(frames):
        raise FlowMosaicError("one transform per frame required")
    transforms = [np.asarray(t, dtype=np.float64) for t in transforms]
    if anchor is None:
        anchor = next((k for k, t in enumerate(transforms) if np.allclose(t, np.eye(3), atol=1e-12)), 0)
    anchor_frame = frames[anchor]
    anchor_gsd = anchor_frame.intrinsics.gsd(anchor_frame.geotag.altitude_agl)[0]
    scale = float(scale or anchor_gsd)
    k = scale / anchor_gsd

    pts = np.vstack([apply_homography(t, _corners(f.width, f.height)) for f, t in zip(frames, transforms)])
    xmin, ymin = np.floor(pts.min(axis=0))
    xmax, ymax = np.ceil(pts.max(axis=0))
    cw = int(math.floor((xmax - xmin) / k)) + 1
    ch = int(math.floor((ymax - ymin) / k)) + 1
    if cw * ch > MAX_CANVAS_PIXELS:
        raise FlowMosaicError(f"canvas {cw}x{ch} exceeds {MAX_CANVAS_PIXELS} pixels; registration diverged?")
    c2a = np.array([[k, 0.0, xmin], [0.0, k, ymin], [0.0, 0.0, 1.0]])
    a2c = np.linalg.inv(c2a)

    channels = min(f.pixels.shape[2] for f in frames)
    acc = np.zeros((ch, cw, channels))
    wsum = np.zeros((ch, cw))
    order = sorted(range(len(frames)), key=lambda i: (frames[i].sequence_index or 0, frames[i].name, i))
    for i in order:
        f, t = frames[i], transforms[i]
        cpts = apply_homography(a2c @ t, _corners(f.width, f.height))
        c0 = max(int(math.floor(cpts[:, 0].min())), 0)
        c1 = min(int(math.ceil(cpts[:, 0].max())) + 1, cw)
        r0 = max(int(math.floor(cpts[:, 1].min())), 0)
        r1 = min(int(math.ceil(cpts[:, 1].max())) + 1, ch)
        if c1 <= c0 or r1 <= r0:
            continue
        c2f = np.linalg.inv(t) @ c2a
        kernels.accumulate_frame(acc, wsum, f.pixels[:, :, :channels], c2f, (r0, r1, c0, c1))

    covered = wsum > 0
    pixels = np.zeros_like(acc)
    pixels[covered] = acc[covered] / wsum[covered][:, None]

    east, north = _pixel_to_ground(anchor_frame, xmin, ymin)
    g = anchor_frame.geotag
    lat, lon = LocalTangent(g.latitude, g.longitude).to_geo(east, north)
    origin = GeoTag(float(lat), float(lon), g.altitude_agl)
    return MosaicCanvas(pixels, wsum, origin, scale, c2a, float(g.heading or 0.0))


def mosaic_rmse(canvas, truth, canvas_to_truth):
    """RMS intensity difference between covered canvas pixels and the truth
    raster sampled at the mapped positions."""
    truth = np.asarray(truth)
    if truth.ndim == 2:
        truth = truth[:, :, None]
    rows, cols = np.nonzero(canvas.covered)
    if rows.size == 0:
        raise NoOverlap("canvas has no covered pixels")
    pts = apply_homography(np.asarray(canvas_to_truth, dtype=np.float64), np.stack([cols, rows], axis=1).astype(np.float64))
    vals, valid = kernels.bilinear_sample(truth, pts[:, 0][None, :], pts[:, 1][None, :])
    valid = valid[0]
    if not valid.any():
        raise NoOverlap("canvas does not overlap the truth raster")
    c = min(truth.shape[2], canvas.pixels.shape[2])
    diff = canvas.pixels[rows[valid], cols[valid], :c] - vals[0][valid, :c]
    return float(np.sqrt(np.mean(diff**2)))


def canvas_to_local(canvas, tangent):
    """3x3 affine taking canvas pixels to (east, north) metres in ``tangent``.

    Built from the georeference alone, so two canvases of the same scene can
    be compared without sharing a registration.
    """
    e0, n0 = tangent.to_local(canvas.origin_geo.latitude, canvas.origin_geo.longitude)
    s = canvas.scale
    psi = math.radians(canvas.rotation_deg)
    c, sn = math.cos(psi), math.sin(psi)
    return np.array([[s * c, -s * sn, float(e0)], [-s * sn, -s * c, float(n0)], [0.0, 0.0, 1.0]])


def resample_canvas(src, dst):
    """``src`` pixels resampled onto ``dst``'s grid via the georeferences.

    Returns (pixels, valid) where valid marks dst pixels that land on covered
    src pixels.
    """
    tangent = LocalTangent(dst.origin_geo.latitude, dst.origin_geo.longitude)
    m = np.linalg.inv(canvas_to_local(src, tangent)) @ canvas_to_local(dst, tangent)
    h, w = dst.weight.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = apply_homography(m, np.stack([xs.ravel(), ys.ravel()], axis=1))
    px = pts[:, 0].reshape(h, w)
    py = pts[:, 1].reshape(h, w)
    vals, valid = kernels.bilinear_sample(src.pixels, px, py)
    cov, _ = kernels.bilinear_sample(src.covered.astype(np.float64), px, py)
    return vals, valid & (cov > 0.999)
