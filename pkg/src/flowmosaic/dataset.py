"""Geotagged frame ingestion, flight ordering and footprint overlap."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    DegenerateGeometry,
    EmptyDataset,
    IncompatibleIntrinsics,
    MetadataMissing,
    ValidationError,
)

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6378137.0
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MANIFEST_NAME = "manifest.json"
LEG_TURN_DEG = 90.0


@dataclass(frozen=True)
class GeoTag:
    latitude: float
    longitude: float
    altitude_agl: float
    timestamp: Optional[float] = None
    heading: Optional[float] = None

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"longitude {self.longitude} outside [-180, 180]")
        if not self.altitude_agl > 0:
            raise ValidationError(f"altitude_agl must be positive, got {self.altitude_agl}")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera; lengths in metres, raster size in pixels."""

    focal_length: float
    sensor_width: float
    sensor_height: float
    image_width: int
    image_height: int

    def __post_init__(self):
        for name in ("focal_length", "sensor_width", "sensor_height", "image_width", "image_height"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        sensor_aspect = self.sensor_width / self.sensor_height
        image_aspect = self.image_width / self.image_height
        if abs(sensor_aspect / image_aspect - 1.0) > 0.01:
            raise ValidationError(
                f"sensor aspect {sensor_aspect:.4f} does not match image aspect {image_aspect:.4f}"
            )

    def gsd(self, altitude_agl):
        """Ground metres per pixel along (x, y) for a nadir view."""
        return (
            self.sensor_width * altitude_agl / (self.focal_length * self.image_width),
            self.sensor_height * altitude_agl / (self.focal_length * self.image_height),
        )


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"


@dataclass
class ImageFrame:
    pixels: np.ndarray
    geotag: GeoTag
    intrinsics: CameraIntrinsics
    provenance: Provenance = Provenance.ORIGINAL
    sequence_index: Optional[Fraction] = None
    name: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3, 4):
            raise ValidationError(f"pixels must be HxWxC with C in (1, 3, 4), got {px.shape}")
        if px.shape[0] < 16 or px.shape[1] < 16:
            raise ValidationError(f"frame too small: {px.shape[:2]}")
        self.pixels = px
        if self.sequence_index is not None:
            self.sequence_index = Fraction(self.sequence_index)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class FrameSequence:
    frames: list
    legs: list  # list of (start, stop) half-open index ranges
    diagnostics: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def leg_of(self, index):
        for k, (start, stop) in enumerate(self.legs):
            if start <= index < stop:
                return k
        raise IndexError(index)

    def adjacent_pairs(self, within_leg=True):
        """Index pairs (i, i+1) of consecutive frames."""
        pairs = []
        for i in range(len(self.frames) - 1):
            if within_leg and self.leg_of(i) != self.leg_of(i + 1):
                continue
            pairs.append((i, i + 1))
        return pairs


# -- local geometry -----------------------------------------------------------


class LocalTangent:
    """Equirectangular east/north metres around a reference coordinate."""

    def __init__(self, lat0, lon0):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._k = math.pi / 180.0 * EARTH_RADIUS_M
        self._coslat = math.cos(math.radians(self.lat0))

    @classmethod
    def around(cls, geotags):
        lats = [g.latitude for g in geotags]
        lons = [g.longitude for g in geotags]
        return cls(sum(lats) / len(lats), sum(lons) / len(lons))

    def to_local(self, lat, lon):
        east = (np.asarray(lon) - self.lon0) * self._k * self._coslat
        north = (np.asarray(lat) - self.lat0) * self._k
        return east, north

    def to_geo(self, east, north):
        lat = self.lat0 + np.asarray(north) / self._k
        lon = self.lon0 + np.asarray(east) / (self._k * self._coslat)
        return lat, lon


def bearing_deg(g0, g1):
    """Direction of travel from g0 to g1, degrees clockwise from north."""
    frame = LocalTangent(0.5 * (g0.latitude + g1.latitude), 0.5 * (g0.longitude + g1.longitude))
    e0, n0 = frame.to_local(g0.latitude, g0.longitude)
    e1, n1 = frame.to_local(g1.latitude, g1.longitude)
    return math.degrees(math.atan2(float(e1 - e0), float(n1 - n0))) % 360.0


def ground_distance(g0, g1):
    frame = LocalTangent(0.5 * (g0.latitude + g1.latitude), 0.5 * (g0.longitude + g1.longitude))
    e0, n0 = frame.to_local(g0.latitude, g0.longitude)
    e1, n1 = frame.to_local(g1.latitude, g1.longitude)
    return float(math.hypot(e1 - e0, n1 - n0))


def _angle_diff(a, b):
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def footprint_extent(intr, altitude_agl, direction_deg, heading_deg=0.0):
    """Chord of the nadir footprint rectangle through its centre, metres.

    ``direction_deg`` is a ground bearing; the image's up axis points along
    ``heading_deg``.
    """
    gx, gy = intr.gsd(altitude_agl)
    width_m = gx * intr.image_width
    height_m = gy * intr.image_height
    phi = math.radians(direction_deg - heading_deg)
    along_up = abs(math.cos(phi))
    along_right = abs(math.sin(phi))
    chords = []
    if along_up > 1e-12:
        chords.append(height_m / along_up)
    if along_right > 1e-12:
        chords.append(width_m / along_right)
    return min(chords)


def estimate_overlap(a, b):
    """Fraction of footprint shared by two nadir frames along their baseline."""
    if a.intrinsics != b.intrinsics:
        raise IncompatibleIntrinsics(f"{a.name!r} and {b.name!r} have different intrinsics")
    dist = ground_distance(a.geotag, b.geotag)
    if dist == 0.0:
        return 1.0
    direction = bearing_deg(a.geotag, b.geotag)
    extents = [
        footprint_extent(f.intrinsics, f.geotag.altitude_agl, direction, f.geotag.heading or 0.0)
        for f in (a, b)
    ]
    extent = 0.5 * (extents[0] + extents[1])
    return float(min(max(1.0 - dist / extent, 0.0), 1.0))


# -- ordering -----------------------------------------------------------------


def _split_by_heading(headings):
    starts = [0]
    for i in range(1, len(headings)):
        if _angle_diff(headings[i - 1], headings[i]) > LEG_TURN_DEG:
            starts.append(i)
    return starts


def _split_by_displacement(east, north):
    # A frame opens a new leg when its outgoing step turns more than 90 degrees
    # away from the current leg's first step.
    n = len(east)
    starts = [0]
    ref = None
    for i in range(n - 1):
        step = np.array([east[i + 1] - east[i], north[i + 1] - north[i]])
        norm = float(np.hypot(*step))
        if norm == 0.0:
            continue
        step /= norm
        if ref is None:
            ref = step
            continue
        if float(np.dot(ref, step)) < math.cos(math.radians(LEG_TURN_DEG)) - 1e-12:
            if i != starts[-1]:
                starts.append(i)
            ref = step
    return starts


def _nearest_neighbour_order(east, north):
    corner_e, corner_n = east.min(), north.min()
    remaining = list(range(len(east)))
    d0 = np.hypot(east - corner_e, north - corner_n)
    current = int(np.argmin(d0))
    order = [current]
    remaining.remove(current)
    while remaining:
        rem = np.array(remaining)
        d = np.hypot(east[rem] - east[current], north[rem] - north[current])
        current = int(rem[int(np.argmin(d))])
        order.append(current)
        remaining.remove(current)
    return order


def order_flight_sequence(frames):
    """Order frames along the flight and split them into straight legs.

    Precedence: explicit ``sequence_index`` on every frame, then timestamps
    on every frame, then greedy nearest-neighbour chaining from the frame
    closest to the south-west corner of the bounding box.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise EmptyDataset(f"need at least 2 frames, got {len(frames)}")
    tangent = LocalTangent.around([f.geotag for f in frames])
    east, north = tangent.to_local(
        np.array([f.geotag.latitude for f in frames]), np.array([f.geotag.longitude for f in frames])
    )
    if np.ptp(east) < 1e-6 and np.ptp(north) < 1e-6:
        raise DegenerateGeometry("all frames share one GPS position")

    if all(f.sequence_index is not None for f in frames):
        order = sorted(range(len(frames)), key=lambda i: frames[i].sequence_index)
    elif all(f.geotag.timestamp is not None for f in frames):
        order = sorted(range(len(frames)), key=lambda i: frames[i].geotag.timestamp)
    else:
        order = _nearest_neighbour_order(east, north)

    ordered = []
    for pos, i in enumerate(order):
        f = frames[i]
        if f.sequence_index is None:
            f = replace(f, sequence_index=Fraction(pos))
        ordered.append(f)
    east, north = east[order], north[order]

    headings = [f.geotag.heading for f in ordered]
    if all(h is not None for h in headings):
        starts = _split_by_heading(headings)
    else:
        starts = _split_by_displacement(east, north)
    bounds = starts + [len(ordered)]
    legs = [(bounds[k], bounds[k + 1]) for k in range(len(starts))]
    return FrameSequence(frames=ordered, legs=legs)


# -- manifest / EXIF ----------------------------------------------------------


def _rational(v):
    try:
        return float(v)
    except TypeError:
        num, den = v
        return float(num) / float(den)


def _dms_to_deg(dms, ref):
    d, m, s = (_rational(x) for x in dms)
    deg = d + m / 60.0 + s / 3600.0
    return -deg if ref in ("S", "W", b"S", b"W") else deg


def read_exif_metadata(img):
    """Pull GPS and lens fields out of a decoded image's EXIF block.

    Returns a manifest-style dict holding only the keys that were present.
    """
    out = {}
    exif = img.getexif()
    if not exif:
        return out
    gps = exif.get_ifd(0x8825)
    if gps and 2 in gps and 4 in gps:
        out["lat"] = _dms_to_deg(gps[2], gps.get(1, "N"))
        out["lon"] = _dms_to_deg(gps[4], gps.get(3, "E"))
        if 6 in gps:
            alt = _rational(gps[6])
            if gps.get(5, 0) in (1, b"\x01"):
                alt = -alt
            out["alt_agl"] = alt
    sub = exif.get_ifd(0x8769)
    focal = sub.get(0x920A)
    if focal is not None:
        out["focal_length_mm"] = _rational(focal)
        f35 = sub.get(0xA405)
        if f35:
            sw = 36.0 * out["focal_length_mm"] / float(f35)
            out["sensor_width_mm"] = sw
            out["sensor_height_mm"] = sw * img.height / img.width
    return out


def _decode(path):
    try:
        with Image.open(path) as img:
            img.load()
            meta = read_exif_metadata(img)
            if img.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=np.uint16)
            elif img.mode in ("L", "RGB", "RGBA"):
                arr = np.asarray(img)
            else:
                arr = np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.ascontiguousarray(arr), meta


_REQUIRED = ("lat", "lon", "alt_agl", "focal_length_mm", "sensor_width_mm", "sensor_height_mm")


def frame_from_metadata(pixels, meta, name):
    missing = [k for k in _REQUIRED if meta.get(k) is None]
    if missing:
        raise MetadataMissing(f"{name}: missing {', '.join(missing)}")
    geotag = GeoTag(
        latitude=float(meta["lat"]),
        longitude=float(meta["lon"]),
        altitude_agl=float(meta["alt_agl"]),
        timestamp=None if meta.get("timestamp") is None else float(meta["timestamp"]),
        heading=None if meta.get("heading") is None else float(meta["heading"]),
    )
    intr = CameraIntrinsics(
        focal_length=float(meta["focal_length_mm"]) / 1000.0,
        sensor_width=float(meta["sensor_width_mm"]) / 1000.0,
        sensor_height=float(meta["sensor_height_mm"]) / 1000.0,
        image_width=pixels.shape[1],
        image_height=pixels.shape[0],
    )
    seq = meta.get("sequence_index")
    return ImageFrame(
        pixels=pixels,
        geotag=geotag,
        intrinsics=intr,
        provenance=Provenance(meta.get("provenance", Provenance.ORIGINAL.value)),
        sequence_index=None if seq is None else Fraction(str(seq)),
        name=name,
    )


def manifest_entry(frame):
    """Manifest record for a frame (inverse of :func:`frame_from_metadata`)."""
    g, c = frame.geotag, frame.intrinsics
    entry = {
        "lat": g.latitude,
        "lon": g.longitude,
        "alt_agl": g.altitude_agl,
        "focal_length_mm": c.focal_length * 1000.0,
        "sensor_width_mm": c.sensor_width * 1000.0,
        "sensor_height_mm": c.sensor_height * 1000.0,
        "provenance": Provenance(frame.provenance).value,
    }
    if g.timestamp is not None:
        entry["timestamp"] = g.timestamp
    if g.heading is not None:
        entry["heading"] = g.heading
    if frame.sequence_index is not None:
        entry["sequence_index"] = str(frame.sequence_index)
    return entry


def write_manifest(directory, entries):
    path = Path(directory) / MANIFEST_NAME
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _list_images(root):
    found = []
    for sub in (root, root / "frames"):
        if not sub.is_dir():
            continue
        for p in sorted(sub.iterdir()):
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
                found.append(p)
    return found


def load_dataset(path, strict=False, min_frames=2):
    """Load every geotagged image under ``path`` into an ordered sequence.

    Images are read from ``path`` and ``path/frames``. ``manifest.json``
    entries (keyed by the path relative to ``path``) override EXIF fields.
    Undecodable or untagged files are skipped with a diagnostic unless
    ``strict`` is set, in which case the first such error is raised.
    ``min_frames=1`` admits a lone frame (e.g. for a trivial mosaic).
    """
    root = Path(path)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    manifest = {}
    mpath = root / MANIFEST_NAME
    if mpath.exists():
        try:
            manifest = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise DecodeError(f"{mpath}: {exc}") from exc

    frames, diagnostics = [], []
    for p in _list_images(root):
        rel = p.relative_to(root).as_posix()
        try:
            pixels, meta = _decode(p)
            meta.update({k: v for k, v in manifest.get(rel, {}).items() if v is not None})
            frames.append(frame_from_metadata(pixels, meta, rel))
        except (DecodeError, MetadataMissing, ValidationError) as exc:
            if strict:
                raise
            diagnostics.append(f"{rel}: {exc}")
            log.warning("rejected %s: %s", rel, exc)
    if len(frames) < max(min_frames, 1):
        raise EmptyDataset(f"{root}: {len(frames)} usable frame(s); " + "; ".join(diagnostics))
    if len(frames) == 1:
        seq = FrameSequence([replace(frames[0], sequence_index=Fraction(0))], [(0, 1)])
    else:
        seq = order_flight_sequence(frames)
    seq.diagnostics = diagnostics
    return seq


def save_png(path, pixels):
    px = np.asarray(pixels)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    Image.fromarray(px).save(path, format="PNG")
