"""Overlap, surface-distance and landmark accuracy metrics.

Surface points are foreground voxels with at least one background voxel in
their six-neighbourhood (voxels outside the grid count as background).
Distances are exact nearest-point distances in mm.
"""

import numpy as np

from ._validation import check_spacing
from .volume import sample_field

__all__ = [
    "dice", "surface_voxels", "surface_distances", "directed_distances",
    "nsd", "tre", "percentile",
]


def _check_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b, labels=None):
    """Dice overlap in percent per label.

    Labels absent from both maps map to ``None``.

    Returns
    -------
    dict
        ``{label: dice_percent or None}``.
    """
    a, b = _check_pair(a, b)
    if labels is None:
        labels = sorted((set(np.unique(a)) | set(np.unique(b))) - {0})
    out = {}
    for lab in labels:
        ma = a == lab
        mb = b == lab
        total = int(ma.sum()) + int(mb.sum())
        if total == 0:
            out[int(lab)] = None
            continue
        out[int(lab)] = 200.0 * int(np.logical_and(ma, mb).sum()) / total
    return out


def surface_voxels(mask):
    """Boolean map of boundary voxels of a binary mask."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    center = tuple(slice(1, -1) for _ in mask.shape)
    for axis in range(mask.ndim):
        for step in (-1, 1):
            sl = list(center)
            sl[axis] = slice(1 + step, padded.shape[axis] - 1 + step)
            interior &= padded[tuple(sl)]
    return mask & ~interior


def _surface_points(mask, spacing):
    return np.argwhere(surface_voxels(mask)).astype(np.float64) * spacing


def directed_distances(src, dst, chunk=2048):
    """For each point of ``src`` the Euclidean distance to the nearest ``dst``."""
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        block = src[start:start + chunk]
        d2 = np.zeros((len(block), len(dst)))
        for k in range(src.shape[1]):
            diff = block[:, k, None] - dst[None, :, k]
            d2 += diff * diff
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def percentile(values, q):
    """Linearly interpolated percentile (``numpy`` default method)."""
    return float(np.percentile(values, q))


def _pooled(a, b, label, spacing):
    a, b = _check_pair(a, b)
    spacing = check_spacing(spacing, a.ndim)
    pa = _surface_points(a == label, spacing)
    pb = _surface_points(b == label, spacing)
    if len(pa) == 0 or len(pb) == 0:
        return None
    return directed_distances(pa, pb), directed_distances(pb, pa)


def surface_distances(a, b, label=1, spacing=None):
    """HD95 and ASSD in mm over the pooled two-way surface distances.

    Returns ``None`` when either mask is empty for ``label``.
    """
    dist = _pooled(a, b, label, spacing)
    if dist is None:
        return None
    pooled = np.concatenate(dist)
    return percentile(pooled, 95), float(pooled.mean())


def nsd(a, b, label=1, tau=1.0, spacing=None):
    """Normalised surface dice in percent at tolerance ``tau`` mm.

    The share of each surface lying within ``tau`` of the other surface,
    averaged over the two surfaces.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    dist = _pooled(a, b, label, spacing)
    if dist is None:
        return None
    d_ab, d_ba = dist
    return 50.0 * (np.mean(d_ab <= tau) + np.mean(d_ba <= tau))


def tre(u, fixed_points, moving_points, spacing=None):
    """Target registration error statistics in mm.

    Each fixed landmark ``p`` is mapped to ``p + u(p)`` (``u`` interpolated
    linearly) and compared with its moving correspondence.

    Returns
    -------
    dict
        ``errors`` plus ``mean``, ``std``, ``median`` and ``p75``.
    """
    p = np.asarray(fixed_points, dtype=np.float64)
    q = np.asarray(moving_points, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(
            f"landmark counts differ: {p.shape[0]} fixed vs {q.shape[0]} moving")
    u = np.asarray(u, dtype=np.float64)
    spacing = check_spacing(spacing, u.shape[0])
    if len(p) == 0:
        raise ValueError("no landmarks")
    hi = np.asarray(u.shape[1:], dtype=np.float64) - 1
    if np.any(p < 0) or np.any(p > hi):
        raise ValueError("fixed landmark outside the displacement grid")
    mapped = p + sample_field(u, p)
    err = np.sqrt(np.sum(((mapped - q) * spacing) ** 2, axis=1))
    return {
        "errors": err,
        "mean": float(err.mean()),
        "std": float(err.std()),
        "median": float(np.median(err)),
        "p75": percentile(err, 75),
    }
