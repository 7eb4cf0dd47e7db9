"""Ground sample distance, vegetation indices, health classes and image
similarity metrics."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadThresholds, DimensionMismatch, MissingBand, NonPositiveAltitude

DEFAULT_THRESHOLDS = (0.2, 0.4, 0.6)
HEALTH_MAGIC = b"OFHM"
_HEADER = struct.Struct("<4sII")

# red -> orange -> yellow -> light green -> green -> dark green
_PALETTE_ANCHORS = np.array(
    [[215, 25, 28], [253, 174, 97], [255, 255, 191], [166, 217, 106], [26, 150, 65], [0, 90, 30]], dtype=np.float64
)


class IndexKind(str, enum.Enum):
    NDVI = "NDVI"
    VARI = "VARI"


@dataclass
class SpectralBands:
    red: np.ndarray
    green: Optional[np.ndarray] = None
    blue: Optional[np.ndarray] = None
    nir: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = np.shape(self.red)
        for name in ("green", "blue", "nir"):
            band = getattr(self, name)
            if band is not None and np.shape(band) != shape:
                raise DimensionMismatch(f"{name} band {np.shape(band)} vs red {shape}")

    @classmethod
    def from_rgb(cls, rgb, nir=None):
        rgb = np.asarray(rgb, dtype=np.float64)
        return cls(rgb[..., 0], rgb[..., 1], rgb[..., 2], None if nir is None else np.asarray(nir, dtype=np.float64))


@dataclass
class HealthMap:
    index: np.ndarray
    kind: IndexKind
    classes: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None


def compute_gsd(intr, altitude_agl):
    """Ground sample distance in cm/px along (width, height)."""
    if not altitude_agl > 0:
        raise NonPositiveAltitude(f"altitude {altitude_agl} must be positive")
    gx = 100.0 * intr.sensor_width * altitude_agl / (intr.focal_length * intr.image_width)
    gy = 100.0 * intr.sensor_height * altitude_agl / (intr.focal_length * intr.image_height)
    return gx, gy


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    nz = den != 0
    np.divide(num, den, out=out, where=nz)
    return np.clip(out, -1.0, 1.0)


def ndvi(bands):
    """(NIR - Red) / (NIR + Red); zero where the denominator vanishes."""
    if bands.nir is None:
        raise MissingBand("NDVI needs a near-infrared band; use vari() for RGB-only data")
    nir = np.asarray(bands.nir, dtype=np.float64)
    red = np.asarray(bands.red, dtype=np.float64)
    return HealthMap(_ratio(nir - red, nir + red), IndexKind.NDVI)


def vari(bands):
    """(G - R) / (G + R - B) clamped to [-1, 1]; zero where the denominator vanishes."""
    if bands.green is None or bands.blue is None:
        raise MissingBand("VARI needs red, green and blue bands")
    r = np.asarray(bands.red, dtype=np.float64)
    g = np.asarray(bands.green, dtype=np.float64)
    b = np.asarray(bands.blue, dtype=np.float64)
    return HealthMap(_ratio(g - r, g + r - b), IndexKind.VARI)


def health_map(bands):
    """NDVI when an NIR band exists, otherwise VARI (labelled as such)."""
    return ndvi(bands) if bands.nir is not None else vari(bands)


def palette(n_classes):
    """n RGB colours from red (class 0) to dark green (top class)."""
    if n_classes == 1:
        return _PALETTE_ANCHORS[-2:-1].astype(np.uint8)
    pos = np.linspace(0.0, len(_PALETTE_ANCHORS) - 1.0, n_classes)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(_PALETTE_ANCHORS) - 1)
    f = (pos - lo)[:, None]
    return np.rint(_PALETTE_ANCHORS[lo] * (1 - f) + _PALETTE_ANCHORS[hi] * f).astype(np.uint8)


def classify_health(hmap, thresholds=DEFAULT_THRESHOLDS):
    """Bucket the index by ascending cut points; returns (map, RGB raster).

    Class id is the number of thresholds strictly below the index value.
    """
    th = np.asarray(list(thresholds), dtype=np.float64)
    if th.size and (np.any(np.diff(th) <= 0) or th.min() < -1 or th.max() > 1):
        raise BadThresholds(f"thresholds must be strictly ascending within [-1, 1]: {list(thresholds)}")
    classes = np.searchsorted(th, hmap.index, side="left").astype(np.int32)
    rgb = palette(th.size + 1)[classes]
    if hmap.valid is not None:
        rgb = np.where(hmap.valid[..., None], rgb, 0).astype(np.uint8)
    return HealthMap(hmap.index, hmap.kind, classes, hmap.valid), rgb


def write_index_raw(path, index):
    """Single-plane little-endian f32 raster behind a ``magic, u32 w, u32 h`` header."""
    index = np.asarray(index)
    h, w = index.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(HEALTH_MAGIC, w, h))
        fh.write(np.ascontiguousarray(index, dtype="<f4").tobytes())


def read_index_raw(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h = _HEADER.unpack_from(data)
    if magic != HEALTH_MAGIC or len(data) != _HEADER.size + 4 * w * h:
        raise ValueError(f"{path}: not a health-map raster")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float64)


def psnr(a, b, peak=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def ssim(a, b, peak=255.0, window=8, stride=4):
    """Mean SSIM over ``window`` x ``window`` windows placed every ``stride`` px.

    Window statistics use population (1/N) moments.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DimensionMismatch("ssim expects single-channel rasters")
    if min(a.shape) < window:
        raise DimensionMismatch(f"raster smaller than the {window}px window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))[::stride, ::stride]
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))[::stride, ::stride]
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a**2
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b**2
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())
