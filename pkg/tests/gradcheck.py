"""Finite-difference gradient oracle shared by the test suite.

Central differences with step h on a scalar-valued function of numpy
arrays. Kept independent of the tape: the oracle re-runs the forward pass
with perturbed raw values and never touches recorded gradients.
"""

import numpy as np

STEP = 1e-5
# Relative-error floor: FD noise is ~1e-9 for O(1) losses, so entries whose
# true gradient is below the floor are compared against it instead of
# against ~0 (which would amplify pure roundoff into spurious failures).
REL_FLOOR = 1e-5


def central_difference(f, arrays, h=STEP):
    """Gradient of scalar f(arrays) wrt every entry of every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f()
            flat[k] = orig - h
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
