"""Hot inner loops, each available as a numba kernel and a pure-numpy twin.

Set ``FLOWMOSAIC_DISABLE_NUMBA=1`` to route every dispatcher to the numpy
implementation. Both paths are importable regardless of the flag so the two
can be compared in the same process (see ``benchmarks/bench_kernels.py``).
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(
    "FLOWMOSAIC_DISABLE_NUMBA", "0"
).strip().lower() not in ("1", "true", "yes", "on")


def backend():
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"


from .sampling import bilinear_sample, accumulate_frame  # noqa: E402
from .hs import hs_step  # noqa: E402
from .binary import describe, hamming_matrix  # noqa: E402

__all__ = [
    "USE_NUMBA",
    "HAVE_NUMBA",
    "backend",
    "bilinear_sample",
    "accumulate_frame",
    "hs_step",
    "describe",
    "hamming_matrix",
]
