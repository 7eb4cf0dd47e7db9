"""Frame builders shared by the test modules."""

import numpy as np

from flowmosaic import kernels
from flowmosaic.dataset import CameraIntrinsics, GeoTag, ImageFrame


def make_frame(pixels=None, lat=40.0, lon=-83.0, alt=15.0, size=64, **kw):
    if pixels is None:
        pixels = np.zeros((size, size, 3), np.uint8)
    h, w = pixels.shape[:2]
    intr = CameraIntrinsics(4e-3, 2.048e-3 * w / 512, 2.048e-3 * h / 512, w, h)
    tag_kw = {k: kw.pop(k) for k in ("timestamp", "heading") if k in kw}
    return ImageFrame(pixels, GeoTag(lat, lon, alt, **tag_kw), intr, **kw)


def shift_image(img, dx, dy):
    """``img`` sampled at (x - dx, y - dy): content moves by (+dx, +dy)."""
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out, _ = kernels.bilinear_sample(img, xs - dx, ys - dy)
    return out
