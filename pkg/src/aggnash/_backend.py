"""Select the RK4 kernel at import time.

The compiled extension is used when it was built; set ``AGGNASH_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

import numpy as np

from . import _rk4_py

try:
    if os.environ.get("AGGNASH_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _rk4_ext
except ImportError:
    _rk4_ext = None

KERNELS = {"python": _rk4_py.rk4_affine}
if _rk4_ext is not None:
    KERNELS["cython"] = _rk4_ext.rk4_affine

BACKEND = "cython" if "cython" in KERNELS else "python"


def affine_steps(M, b, Y, h, n_steps, stride, limit, backend=None):
    """Run ``n_steps`` RK4 steps of ``Y' = M Y + b`` in place.

    Returns ``(steps_done, records)`` where ``records`` holds the state after
    every ``stride``-th completed step.
    """
    kernel = KERNELS[backend or BACKEND]
    out = np.empty((n_steps // stride,) + Y.shape)
    done = kernel(M, b, Y, float(h), int(n_steps), int(stride), out, float(limit))
    return done, out[:done // stride]
