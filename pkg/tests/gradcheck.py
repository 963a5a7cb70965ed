"""Central-difference gradient oracle shared by the test modules.

The oracle re-runs the forward closure with each scalar input nudged by +-h,
so it is independent of the tape machinery it is used to check.
"""

import numpy as np


def numeric_grad(fn, tensors, h=1e-5):
    """Central-difference gradients of scalar-valued fn() w.r.t. each tensor.

    fn must rebuild its forward pass from the tensors' current .data on every
    call; the tensors are perturbed in place and restored.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn()
            flat[i] = orig - h
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(got, want, floor=1e-3):
    """Infinity-norm relative error with an absolute floor.

    When the reference gradient is genuinely near zero (e.g. through a
    scale-invariant normalization) the comparison degrades to an absolute
    check at `floor` scale, below which central differences are all
    truncation noise.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.abs(want).max(), floor)
    return np.abs(got - want).max() / scale
