"""
Central finite differences for checking backward rules.
"""

import logging

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionError

logger = logging.getLogger(__name__)

FLOOR = 1e-3


def finite_difference(func, tensor, eps=1e-5):
    """
    Central-difference gradient of the scalar `func()` with respect to every
    entry of `tensor`. The tensor's data is perturbed in place and restored.
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    for j in range(flat.size):
        saved = flat[j]
        flat[j] = saved + eps
        fplus = float(func())
        flat[j] = saved - eps
        fminus = float(func())
        flat[j] = saved
        grad[j] = (fplus - fminus) / (2 * eps)
    return grad.reshape(tensor.shape)


def relative_error(analytic, numeric, floor=FLOOR):
    """
    Worst per-entry error |a - n| / max(|a|, |n|, floor). Entries smaller than
    `floor` are judged against the floor, which sits above the roundoff of a
    central difference at h = 1e-5 (about 1e-11 times the loss).
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise DimensionError(f'gradient shapes differ: {analytic.shape} vs {numeric.shape}')
    if not analytic.size:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max())


def analytic_gradients(loss_fn, tensors):
    """Run `loss_fn()` on a fresh tape and return the gradient of each tensor."""
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()
    with ad.Tape():
        loss = loss_fn()
    ad.backward(loss)
    return [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(loss_fn, tensors, eps=1e-5):
    """
    Compare backward-rule gradients with central differences.

    Returns the largest relative error over all tensors.
    """
    analytic = analytic_gradients(loss_fn, tensors)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        numeric = finite_difference(lambda: loss_fn().item(), tensor, eps)
        err = relative_error(grad, numeric)
        logger.debug('gradcheck tensor=%s shape=%s rel_err=%.3e', tensor.name, tensor.shape, err)
        worst = max(worst, err)
    return worst
