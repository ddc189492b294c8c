"""Central finite-difference gradient checking against the analytic backward."""

from __future__ import annotations

import numpy as np


def numerical_grad(loss_fn, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-based relative difference: ||a - n|| / max(||a||, ||n||, tiny)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_model_gradients(params, loss_fn, analytic_grads, step=1e-3, names=None):
    """Relative error per parameter tensor, via central differences.

    ``loss_fn()`` must recompute the loss from the current (perturbed) state
    of ``params.tensors``; dropout masks and batch-norm statistics must be a
    pure function of the inputs for the comparison to make sense.
    """
    errors = {}
    for name in names or analytic_grads:
        numeric = numerical_grad(loss_fn, params.tensors[name], step=step)
        errors[name] = relative_error(analytic_grads[name], numeric)
    return errors
