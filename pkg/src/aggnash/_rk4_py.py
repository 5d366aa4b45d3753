"""Pure-NumPy RK4 kernel; reference and fallback for the compiled one."""

import math

import numpy as np


def rk4_affine(M, b, Y, h, n_steps, stride, out, limit):
    """Advance ``Y' = M Y + b 1^T`` by ``n_steps`` classical RK4 steps in place.

    After every ``stride``-th step the state is copied to ``out[j]``.  Returns
    the number of steps completed with ``|Y| <= limit``; a value below
    ``n_steps`` means the step after that count produced a non-finite or
    over-limit state (which is left in ``Y``).
    """
    bcol = b[:, None]
    half = 0.5 * h
    sixth = h / 6.0
    limit2 = limit * limit
    j = 0
    for step in range(n_steps):
        k1 = M @ Y + bcol
        k2 = M @ (Y + half * k1) + bcol
        k3 = M @ (Y + half * k2) + bcol
        k4 = M @ (Y + h * k3) + bcol
        Y += sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        sq = float(np.einsum("ij,ij->", Y, Y))
        if not sq <= limit2 or math.isnan(sq):
            return step
        if (step + 1) % stride == 0:
            out[j] = Y
            j += 1
    return n_steps
