"""Dense optical flow: coarse-to-fine warped Horn-Schunck plus the
intermediate-timestep flow combination used for frame synthesis."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DecodeError, DimensionMismatch, TOutOfRange, ValidationError

log = logging.getLogger(__name__)

OFUF_MAGIC = b"OFUF"
_HEADER = struct.Struct("<4sII")
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_LEVEL_SIDE = 16


@dataclass
class FlowField:
    """Per-pixel displacement: a pixel p at ``src_time`` sits at
    ``p + (u, v)`` at ``dst_time``."""

    u: np.ndarray
    v: np.ndarray
    src_time: Fraction = Fraction(0)
    dst_time: Fraction = Fraction(1)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise DimensionMismatch(f"u {self.u.shape} and v {self.v.shape} differ")
        if self.src_time == self.dst_time and (self.u.any() or self.v.any()):
            raise ValidationError("a flow between identical times must be zero")

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, shape, src_time=0, dst_time=1):
        return cls(np.zeros(shape), np.zeros(shape), Fraction(src_time), Fraction(dst_time))


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 5
    iterations_per_level: int = 50
    smoothness_weight: float = 15.0
    convergence_epsilon: float = 0.01
    global_init: bool = True

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValidationError("pyramid_levels must be >= 1")
        if self.iterations_per_level < 1:
            raise ValidationError("iterations_per_level must be >= 1")
        if self.smoothness_weight < 0:
            raise ValidationError("smoothness_weight must be >= 0")


def luminance(pixels):
    """Float luminance raster (Rec. 601 weights) from HxW or HxWxC pixels."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        return px
    if px.shape[2] == 1:
        return px[:, :, 0]
    return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def _blur(img):
    out = ndimage.correlate1d(img, _BINOMIAL5, axis=0, mode="reflect")
    return ndimage.correlate1d(out, _BINOMIAL5, axis=1, mode="reflect")


def build_pyramid(image, levels):
    """Binomial low-pass / decimate-by-2 pyramid, finest level first.

    Levels that would push the short side below 16 px are dropped with a
    warning.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionMismatch("build_pyramid expects a single-channel raster")
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    effective = levels
    while effective > 1 and min(img.shape) < MIN_LEVEL_SIDE * 2 ** (effective - 1):
        effective -= 1
    if effective != levels:
        log.warning("pyramid reduced from %d to %d levels for %s image", levels, effective, img.shape)
    pyr = [img]
    for _ in range(effective - 1):
        pyr.append(_blur(pyr[-1])[::2, ::2])
    return pyr


def _tukey(n, alpha=0.25):
    x = np.linspace(0.0, 1.0, n)
    w = np.ones(n)
    edge = alpha / 2.0
    lo = x < edge
    hi = x > 1.0 - edge
    w[lo] = 0.5 * (1 + np.cos(np.pi * (x[lo] / edge - 1)))
    w[hi] = 0.5 * (1 + np.cos(np.pi * ((x[hi] - 1.0) / edge + 1)))
    return w


def _overlap_ncc(a, b, dx, dy):
    # a(p) against b(p + d) on the integer-shift overlap.
    h, w = a.shape
    x0, x1 = max(0, -dx), min(w, w - dx)
    y0, y1 = max(0, -dy), min(h, h - dy)
    if x1 - x0 < w // 8 or y1 - y0 < h // 8:
        return -np.inf
    pa = a[y0:y1, x0:x1]
    pb = b[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    pa = pa - pa.mean()
    pb = pb - pb.mean()
    den = np.sqrt((pa * pa).sum() * (pb * pb).sum())
    return float((pa * pb).sum() / den) if den > 0 else -np.inf


def global_translation(a, b, candidates=5):
    """Integer shift d maximising agreement of a(p) with b(p + d).

    Zero-padded phase correlation proposes peaks; each is re-scored by
    normalised cross-correlation on the actual overlap so that window and
    padding artefacts cannot win.
    """
    h, w = a.shape
    win = np.outer(_tukey(h), _tukey(w))
    fa = np.fft.rfft2((a - a.mean()) * win, s=(2 * h, 2 * w))
    fb = np.fft.rfft2((b - b.mean()) * win, s=(2 * h, 2 * w))
    cross = np.conj(fa) * fb
    cross /= np.abs(cross) + 1e-12
    corr = np.fft.irfft2(cross, s=(2 * h, 2 * w))
    corr = ndimage.gaussian_filter(corr, 1.0, mode="wrap")
    peaks = corr == ndimage.maximum_filter(corr, size=5, mode="wrap")
    ys, xs = np.nonzero(peaks)
    order = np.argsort(-corr[ys, xs], kind="stable")[: candidates * 4]
    best, best_score = (0, 0), _overlap_ncc(a, b, 0, 0)
    tried = 0
    for k in order:
        dy = int(ys[k]) if ys[k] < h else int(ys[k]) - 2 * h
        dx = int(xs[k]) if xs[k] < w else int(xs[k]) - 2 * w
        if abs(dx) >= w or abs(dy) >= h:
            continue
        score = _overlap_ncc(a, b, dx, dy)
        tried += 1
        if score > best_score + 1e-12:
            best, best_score = (dx, dy), score
        if tried >= candidates:
            break
    return best


def _upsample_flow(u, v, shape):
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    stacked = np.stack([u, v], axis=-1)
    up, _ = kernels.bilinear_sample(stacked, xs / 2.0, ys / 2.0)
    return 2.0 * up[:, :, 0], 2.0 * up[:, :, 1]


def _refine_level(i0, i1, u, v, params):
    h, w = i0.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    alpha2 = params.smoothness_weight**2
    gy0, gx0 = np.gradient(i0)
    for _ in range(params.iterations_per_level):
        warped, valid = kernels.bilinear_sample(i1, xs + u, ys + v)
        gy1, gx1 = np.gradient(warped)
        ix = 0.5 * (gx0 + gx1)
        iy = 0.5 * (gy0 + gy1)
        it = warped - i0
        un, vn = kernels.hs_step(u, v, u, v, ix, iy, it, valid.astype(np.float64), alpha2)
        step = float(np.mean(np.hypot(un - u, vn - v)))
        u, v = un, vn
        if step < params.convergence_epsilon:
            break
    return u, v


def estimate_flow(i0, i1, params=None):
    """Dense flow F(0->1) between two frames (ImageFrame or raster).

    Colour inputs are reduced to luminance. Returns a FlowField with
    ``src_time=0`` and ``dst_time=1``.
    """
    params = params or FlowParams()
    a = luminance(getattr(i0, "pixels", i0))
    b = luminance(getattr(i1, "pixels", i1))
    if a.shape != b.shape:
        raise DimensionMismatch(f"frame shapes differ: {a.shape} vs {b.shape}")
    pa = build_pyramid(a, params.pyramid_levels)
    pb = build_pyramid(b, params.pyramid_levels)
    top = len(pa) - 1

    u = np.zeros(pa[top].shape)
    v = np.zeros(pa[top].shape)
    if params.global_init:
        # Seed at the finest level whose short side is <= 128 px.
        k = 0
        while k < top and min(pa[k].shape) > 128:
            k += 1
        dx, dy = global_translation(pa[k], pb[k])
        scale = 2.0 ** (top - k)
        u += dx / scale
        v += dy / scale

    for lvl in range(top, -1, -1):
        if u.shape != pa[lvl].shape:
            u, v = _upsample_flow(u, v, pa[lvl].shape)
        u, v = _refine_level(pa[lvl], pb[lvl], u, v, params)
    return FlowField(u, v, Fraction(0), Fraction(1))


def intermediate_flows(f01, f10, t):
    """Flows from a virtual frame at time t back to frames 0 and 1, under
    constant-velocity motion."""
    t = Fraction(t)
    if not 0 <= t <= 1:
        raise TOutOfRange(f"t={t} outside [0, 1]")
    if f01.shape != f10.shape:
        raise DimensionMismatch(f"flow shapes differ: {f01.shape} vs {f10.shape}")
    tf = float(t)
    a = -(1.0 - tf) * tf
    b = tf * tf
    c = (1.0 - tf) ** 2
    ft0 = FlowField(a * f01.u + b * f10.u, a * f01.v + b * f10.v, t, Fraction(0))
    ft1 = FlowField(c * f01.u + a * f10.u, c * f01.v + a * f10.v, t, Fraction(1))
    return ft0, ft1


# -- OFUF exchange format ------------------------------------------------------


def write_ofuf(path, flow):
    """Write ``magic, u32 width, u32 height, f32 u-plane, f32 v-plane`` (LE)."""
    h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(OFUF_MAGIC, w, h))
        fh.write(np.ascontiguousarray(flow.u, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(flow.v, dtype="<f4").tobytes())


def read_ofuf(path, src_time=0, dst_time=1):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DecodeError(f"{path}: truncated header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != OFUF_MAGIC:
        raise DecodeError(f"{path}: bad magic {magic!r}")
    n = w * h
    if len(data) != _HEADER.size + 8 * n:
        raise DecodeError(f"{path}: expected {_HEADER.size + 8 * n} bytes, got {len(data)}")
    planes = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return FlowField(planes[:n].reshape(h, w), planes[n:].reshape(h, w), Fraction(src_time), Fraction(dst_time))


# -- backends ------------------------------------------------------------------


class InternalFlowBackend:
    name = "internal"

    def __call__(self, f0, f1, params):
        return estimate_flow(f0, f1, params)


class ExternalFlowBackend:
    """Reads precomputed ``<frameA>__<frameB>.ofuf`` files from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.name = f"external:{self.directory}"

    def path_for(self, f0, f1):
        return self.directory / f"{Path(f0.name).stem}__{Path(f1.name).stem}.ofuf"

    def __call__(self, f0, f1, params):
        flow = read_ofuf(self.path_for(f0, f1))
        if flow.shape != f0.pixels.shape[:2]:
            raise DimensionMismatch(f"{self.path_for(f0, f1)}: flow {flow.shape} vs frame {f0.pixels.shape[:2]}")
        return flow


def parse_flow_backend(spec):
    """``"internal"`` or ``"external:<dir>"``."""
    if spec in (None, "", "internal"):
        return InternalFlowBackend()
    if spec.startswith("external:"):
        return ExternalFlowBackend(spec.split(":", 1)[1])
    raise ValidationError(f"unknown flow backend {spec!r}")
