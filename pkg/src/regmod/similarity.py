"""Similarity losses with gradients, and the local correlation block."""

from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from ._validation import check_feature_volume, check_same_grid, check_volume
from .features import gaussian_smooth, mind_ssc
from .volume import identity_grid, interpolate

__all__ = [
    "LossValue", "mse", "lncc", "mind_loss", "mind_displacement_gradient",
    "box_sum", "correlation_offsets", "correlation_volume",
    "corr_argmax_proposal",
]

LNCC_EPS = 1e-5


@dataclass
class LossValue:
    """A loss value and the gradient with respect to one argument.

    ``gradient`` has the shape of the differentiated argument, or is
    ``None`` when the loss does not provide one.
    """

    value: float
    gradient: Optional[np.ndarray] = None


def _pair(a, b, min_size=1, allow_2d=True):
    a = check_volume(a, "a", min_size=min_size, allow_2d=allow_2d)
    b = check_volume(b, "b", min_size=min_size, allow_2d=allow_2d)
    check_same_grid(a.shape, b.shape)
    return a, b


def mse(a, b):
    """Mean squared error; the gradient is taken with respect to ``b``."""
    a, b = _pair(a, b)
    diff = b - a
    return LossValue(float(np.mean(diff * diff)), 2.0 * diff / diff.size)


def box_sum(x, window):
    """Sum over a centred box of side ``window``, zero outside the grid.

    Self-adjoint, which the LNCC gradient relies on.
    """
    ones = np.ones(window)
    out = np.asarray(x, dtype=np.float64)
    for axis in range(out.ndim):
        out = correlate1d(out, ones, axis=axis, mode="constant", cval=0.0)
    return out


def lncc(a, b, window=9, eps=LNCC_EPS):
    """Negative mean squared local normalised cross-correlation.

    Local statistics are computed over a ``window``-sided box truncated at
    the grid border. The per-voxel score is
    ``cov(a, b)^2 / max(var(a) var(b), eps)`` and the returned value is
    ``-mean(score)``, so ``-1`` means perfect local affine agreement.

    Returns
    -------
    LossValue
        Gradient with respect to ``b``.
    """
    a, b = _pair(a, b)
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    n = box_sum(np.ones_like(a), window)
    mu_a = box_sum(a, window) / n
    mu_b = box_sum(b, window) / n
    cross = box_sum(a * b, window) / n - mu_a * mu_b
    var_a = box_sum(a * a, window) / n - mu_a * mu_a
    var_b = box_sum(b * b, window) / n - mu_b * mu_b
    den = var_a * var_b
    active = den > eps
    den_f = np.where(active, den, eps)
    score = cross * cross / den_f
    value = -float(np.mean(score))

    p = 2.0 * cross / (den_f * n)
    q = np.where(active, 2.0 * cross * cross * var_a / (den_f * den_f * n), 0.0)
    grad = (a * box_sum(p, window) - box_sum(p * mu_a, window)
            - b * box_sum(q, window) + box_sum(q * mu_b, window))
    return LossValue(value, -grad / a.size)


def _mind_pointwise(desc_a, desc_b):
    diff = desc_a - desc_b
    return np.mean(diff * diff, axis=0)


def mind_loss(a, b, radius=2, dilation=2):
    """Mean squared difference of the MIND-SSC descriptors of two 3D volumes.

    No image gradient is returned; the registration engine uses
    :func:`mind_displacement_gradient` instead.
    """
    a, b = _pair(a, b, allow_2d=False)
    da = mind_ssc(a, radius, dilation)
    db = mind_ssc(b, radius, dilation)
    return LossValue(float(np.mean((da - db) ** 2)))


def mind_displacement_gradient(fixed, moving, u, radius=2, dilation=2,
                               step=0.5, fixed_descriptor=None):
    """MIND loss of ``(fixed, moving o phi)`` and its gradient w.r.t. ``u``.

    The gradient is a directional central difference: the whole field is
    shifted by ``+-step`` along each axis, the moving image re-warped, and
    the per-voxel descriptor mismatch differenced voxel by voxel.
    """
    fixed = check_volume(fixed, "fixed", allow_2d=False)
    moving = check_volume(moving, "moving", allow_2d=False)
    u = np.asarray(u, dtype=np.float64)
    check_same_grid(fixed.shape, moving.shape, ("fixed", "moving"))
    df = fixed_descriptor
    if df is None:
        df = mind_ssc(fixed, radius, dilation)
    grid = identity_grid(fixed.shape) + u
    n = fixed.size
    center = _mind_pointwise(df, mind_ssc(interpolate(moving, grid),
                                          radius, dilation))
    grad = np.empty_like(u)
    for k in range(u.shape[0]):
        shifted = grid.copy()
        shifted[k] += step
        plus = _mind_pointwise(df, mind_ssc(interpolate(moving, shifted),
                                            radius, dilation))
        shifted[k] -= 2.0 * step
        minus = _mind_pointwise(df, mind_ssc(interpolate(moving, shifted),
                                             radius, dilation))
        grad[k] = (plus - minus) / (2.0 * step * n)
    return LossValue(float(center.mean()), grad)


# ---------------------------------------------------------------------------
# Correlation block
# ---------------------------------------------------------------------------

def correlation_offsets(radius, ndim):
    """All integer offsets with ``max|o| <= radius`` in lexicographic order."""
    rng = range(-radius, radius + 1)
    return np.array(list(product(rng, repeat=ndim)), dtype=np.intp)


def correlation_volume(f_t, f_s, radius=1):
    """Local correlation between target and source features.

    ``C[k, x] = <f_t(x), f_s(x + o_k)> / C`` for every offset ``o_k`` of
    :func:`correlation_offsets`; source positions outside the grid are
    clamped to the border.

    Returns
    -------
    ndarray of shape ``((2r + 1)**d, *dims)``.
    """
    f_t = check_feature_volume(f_t, "f_t")
    f_s = check_feature_volume(f_s, "f_s")
    if f_t.shape != f_s.shape:
        raise ValueError(
            f"feature shapes differ: {f_t.shape} vs {f_s.shape}")
    radius = int(radius)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    n_ch = f_t.shape[0]
    dims = f_t.shape[1:]
    offsets = correlation_offsets(radius, len(dims))
    out = np.empty((len(offsets),) + dims)
    base = [np.arange(n) for n in dims]
    for k, off in enumerate(offsets):
        idx = np.ix_(*[np.clip(b + o, 0, n - 1)
                       for b, o, n in zip(base, off, dims)])
        shifted = f_s[(slice(None),) + idx]
        out[k] = np.einsum("c...,c...->...", f_t, shifted) / n_ch
    return out


def corr_argmax_proposal(corr, radius=None, sigma=0.0, tie_tol=0.0):
    """Integer displacement maximising the correlation at every voxel.

    Offsets whose score is within ``tie_tol`` of the maximum count as tied;
    ties go to the smallest offset norm, then the lexicographically first
    offset. The proposal is optionally Gaussian-smoothed by ``sigma``.
    """
    corr = np.asarray(corr, dtype=np.float64)
    ndim = corr.ndim - 1
    if radius is None:
        radius = int(round((corr.shape[0] ** (1.0 / ndim) - 1) / 2))
    offsets = correlation_offsets(radius, ndim)
    if len(offsets) != corr.shape[0]:
        raise ValueError(
            f"{corr.shape[0]} channels do not match radius {radius} in {ndim}D")
    norms = np.sum(offsets ** 2, axis=1)
    # stable sort by norm keeps lexicographic order among equal norms
    order = np.argsort(norms, kind="stable")
    ranked = corr[order]
    best = ranked.max(axis=0)
    winner = np.argmax(ranked >= best - tie_tol, axis=0)
    chosen = offsets[order][winner]
    field = np.moveaxis(chosen, -1, 0).astype(np.float64)
    if sigma > 0:
        field = gaussian_smooth(field, sigma, channel_axis=True)
    return field
