"""One Jacobi sweep of the warped Horn-Schunck update."""

import numpy as np

from . import HAVE_NUMBA, USE_NUMBA

if HAVE_NUMBA:
    from numba import njit


def _neighbour_mean_np(a):
    p = np.pad(a, 1, mode="edge")
    side = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    diag = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return side / 6.0 + diag / 12.0


def _hs_step_np(u, v, u0, v0, ix, iy, it, mask, alpha2):
    ub = _neighbour_mean_np(u)
    vb = _neighbour_mean_np(v)
    gx = ix * mask
    gy = iy * mask
    r = (gx * (ub - u0) + gy * (vb - v0) + it * mask) / (alpha2 + gx * gx + gy * gy)
    return ub - gx * r, vb - gy * r


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _hs_step_nb(u, v, u0, v0, ix, iy, it, mask, alpha2):
        h, w = u.shape
        un = np.empty_like(u)
        vn = np.empty_like(v)
        for i in range(h):
            im = max(i - 1, 0)
            ip = min(i + 1, h - 1)
            for j in range(w):
                jm = max(j - 1, 0)
                jp = min(j + 1, w - 1)
                ub = (u[im, j] + u[ip, j] + u[i, jm] + u[i, jp]) / 6.0 + (
                    u[im, jm] + u[im, jp] + u[ip, jm] + u[ip, jp]
                ) / 12.0
                vb = (v[im, j] + v[ip, j] + v[i, jm] + v[i, jp]) / 6.0 + (
                    v[im, jm] + v[im, jp] + v[ip, jm] + v[ip, jp]
                ) / 12.0
                gx = ix[i, j] * mask[i, j]
                gy = iy[i, j] * mask[i, j]
                r = (gx * (ub - u0[i, j]) + gy * (vb - v0[i, j]) + it[i, j] * mask[i, j]) / (
                    alpha2 + gx * gx + gy * gy
                )
                un[i, j] = ub - gx * r
                vn[i, j] = vb - gy * r
        return un, vn

else:  # pragma: no cover
    _hs_step_nb = _hs_step_np


def hs_step(u, v, u0, v0, ix, iy, it, mask, alpha2):
    """Return the flow after one Jacobi sweep.

    ``u0, v0`` is the flow the data term was linearised around (the flow
    used to warp the second image); ``mask`` zeroes the data term where the
    warped sample left the image.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (u, v, u0, v0, ix, iy, it, mask)]
    fn = _hs_step_nb if USE_NUMBA else _hs_step_np
    return fn(*args, float(alpha2))
