"""Bilinear resampling and feathered canvas accumulation."""

import numpy as np

from . import HAVE_NUMBA, USE_NUMBA

if HAVE_NUMBA:
    from numba import njit


def _bilinear_sample_np(img, xs, ys):
    h, w, c = img.shape
    valid = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy, valid


def _accumulate_frame_np(acc, wsum, frame, canvas_to_frame, r0, r1, c0, c1):
    h, w, _ = frame.shape
    rr, cc = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    m = canvas_to_frame
    den = m[2, 0] * cc + m[2, 1] * rr + m[2, 2]
    x = (m[0, 0] * cc + m[0, 1] * rr + m[0, 2]) / den
    y = (m[1, 0] * cc + m[1, 1] * rr + m[1, 2]) / den
    inside = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    if not inside.any():
        return
    xs, ys = x[inside], y[inside]
    vals, _ = _bilinear_sample_np(frame, xs[None, :], ys[None, :])
    vals = vals[0]
    half = 0.5 * min(w, h)
    wt = np.minimum(np.minimum(xs + 0.5, w - 0.5 - xs), np.minimum(ys + 0.5, h - 0.5 - ys)) / half
    sub_acc = acc[r0:r1, c0:c1]
    sub_w = wsum[r0:r1, c0:c1]
    sub_acc[inside] += wt[:, None] * vals
    sub_w[inside] += wt


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _bilinear_sample_nb(img, xs, ys):
        h, w, c = img.shape
        oh, ow = xs.shape
        out = np.empty((oh, ow, c))
        valid = np.empty((oh, ow), dtype=np.bool_)
        for i in range(oh):
            for j in range(ow):
                x = xs[i, j]
                y = ys[i, j]
                valid[i, j] = x >= 0.0 and x <= w - 1.0 and y >= 0.0 and y <= h - 1.0
                x = min(max(x, 0.0), w - 1.0)
                y = min(max(y, 0.0), h - 1.0)
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                x1 = min(x0 + 1, w - 1)
                y1 = min(y0 + 1, h - 1)
                fx = x - x0
                fy = y - y0
                for k in range(c):
                    top = img[y0, x0, k] * (1.0 - fx) + img[y0, x1, k] * fx
                    bot = img[y1, x0, k] * (1.0 - fx) + img[y1, x1, k] * fx
                    out[i, j, k] = top * (1.0 - fy) + bot * fy
        return out, valid

    @njit(cache=True, nogil=True)
    def _accumulate_frame_nb(acc, wsum, frame, canvas_to_frame, r0, r1, c0, c1):
        h, w, c = frame.shape
        m = canvas_to_frame
        half = 0.5 * min(w, h)
        for r in range(r0, r1):
            for col in range(c0, c1):
                den = m[2, 0] * col + m[2, 1] * r + m[2, 2]
                x = (m[0, 0] * col + m[0, 1] * r + m[0, 2]) / den
                y = (m[1, 0] * col + m[1, 1] * r + m[1, 2]) / den
                if x < 0.0 or x > w - 1.0 or y < 0.0 or y > h - 1.0:
                    continue
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                x1 = min(x0 + 1, w - 1)
                y1 = min(y0 + 1, h - 1)
                fx = x - x0
                fy = y - y0
                wt = min(min(x + 0.5, w - 0.5 - x), min(y + 0.5, h - 0.5 - y)) / half
                for k in range(c):
                    top = frame[y0, x0, k] * (1.0 - fx) + frame[y0, x1, k] * fx
                    bot = frame[y1, x0, k] * (1.0 - fx) + frame[y1, x1, k] * fx
                    acc[r, col, k] += wt * (top * (1.0 - fy) + bot * fy)
                wsum[r, col] += wt

else:  # pragma: no cover
    _bilinear_sample_nb = _bilinear_sample_np
    _accumulate_frame_nb = _accumulate_frame_np


def bilinear_sample(img, xs, ys):
    """Sample ``img`` at fractional positions with clamp-to-edge borders.

    ``img`` is (H, W) or (H, W, C); ``xs``/``ys`` share one 2-D shape.
    Returns the samples (channel axis kept iff the input had one) and a
    boolean raster marking samples whose centre fell inside
    ``[0, W-1] x [0, H-1]``.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    fn = _bilinear_sample_nb if USE_NUMBA else _bilinear_sample_np
    out, valid = fn(np.ascontiguousarray(img), xs, ys)
    if squeeze:
        out = out[:, :, 0]
    return out, valid


def accumulate_frame(acc, wsum, frame, canvas_to_frame, bbox):
    """Add one frame's feathered contribution to a canvas in place.

    ``bbox`` is ``(r0, r1, c0, c1)`` in canvas pixels; ``canvas_to_frame``
    maps canvas (col, row, 1) to frame pixel coordinates.
    """
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    m = np.ascontiguousarray(canvas_to_frame, dtype=np.float64)
    r0, r1, c0, c1 = (int(v) for v in bbox)
    fn = _accumulate_frame_nb if USE_NUMBA else _accumulate_frame_np
    fn(acc, wsum, frame, m, r0, r1, c0, c1)
