"""Diffusion regularisation and Jacobian-based regularity diagnostics."""

import numpy as np

from ._validation import check_field
from .similarity import LossValue

__all__ = ["diffusion", "jacobian_det", "sd_log_j", "ndv", "LOG_J_CLAMP"]

LOG_J_CLAMP = 1e-9


def diffusion(u):
    """Mean squared forward difference of a displacement field.

    ``value = sum_{c,k,x} (u_c(x + e_k) - u_c(x))^2 / (N d^2)`` with ``N``
    voxels and ``d`` spatial axes; differences that would leave the grid
    are skipped. The gradient is the exact derivative of this value.
    """
    u = check_field(u, min_size=2)
    d = u.shape[0]
    norm = u[0].size * d * d
    value = 0.0
    grad = np.zeros_like(u)
    for axis in range(1, u.ndim):
        diff = np.diff(u, axis=axis)
        value += float(np.sum(diff * diff))
        zero = np.zeros_like(np.take(u, [0], axis=axis))
        # d/du(x) of (u(x+1)-u(x))^2 is -2 diff(x) + 2 diff(x-1)
        grad += (np.concatenate([diff, zero], axis=axis) * -1.0
                 + np.concatenate([zero, diff], axis=axis)) * 2.0
    return LossValue(value / norm, grad / norm)


def jacobian_det(u):
    """Per-voxel determinant of ``I + grad u`` in voxel units."""
    u = check_field(u, min_size=3)
    d = u.shape[0]
    jac = np.empty((d, d) + u.shape[1:])
    for i in range(d):
        grads = np.gradient(u[i])
        for j in range(d):
            jac[i, j] = grads[j] + (1.0 if i == j else 0.0)
    if d == 2:
        return jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    return (jac[0, 0] * (jac[1, 1] * jac[2, 2] - jac[1, 2] * jac[2, 1])
            - jac[0, 1] * (jac[1, 0] * jac[2, 2] - jac[1, 2] * jac[2, 0])
            + jac[0, 2] * (jac[1, 0] * jac[2, 1] - jac[1, 1] * jac[2, 0]))


def _masked(j, mask):
    j = np.asarray(j, dtype=np.float64)
    if mask is None:
        vals = j.ravel()
    else:
        mask = np.asarray(mask)
        if mask.shape != j.shape:
            raise ValueError(f"mask {mask.shape} does not match {j.shape}")
        vals = j[mask != 0]
    if vals.size == 0:
        raise ValueError("empty mask")
    return vals


def sd_log_j(j, mask=None):
    """Population std of ``log(max(det, 1e-9))`` over the (masked) voxels."""
    vals = _masked(j, mask)
    return float(np.std(np.log(np.maximum(vals, LOG_J_CLAMP))))


def ndv(j, mask=None, unit="fraction"):
    """Share of (masked) voxels with a non-positive Jacobian determinant.

    ``unit`` is one of ``"fraction"``, ``"percent"`` or ``"permyriad"``.
    """
    scale = {"fraction": 1.0, "percent": 100.0, "permyriad": 1e4}
    if unit not in scale:
        raise ValueError(f"unknown unit {unit!r}")
    vals = _masked(j, mask)
    return float(np.count_nonzero(vals <= 0)) / vals.size * scale[unit]
