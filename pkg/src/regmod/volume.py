"""Volumetric grids, d-linear interpolation and backward warping.

All arrays use C order with axis 0 as the first spatial axis ``x0``.
Displacement fields are channel-first, ``u.shape == (d, *dims)``, and hold
offsets in voxel units of their own grid, so that ``phi(x) = x + u(x)``.
Interpolation clamps out-of-grid coordinates to the border voxel.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np

from ._validation import (check_field, check_same_grid, check_spacing,
                          check_volume)

__all__ = [
    "ScalarVolume", "DisplacementField", "LabelVolume", "LandmarkSet",
    "identity_grid", "interpolate", "sample_linear", "sample_field",
    "warp", "warp_channels", "warp_labels", "compose", "upsample_flow",
    "downsample_avg", "downsample_stride", "pooled_shape",
]


# ---------------------------------------------------------------------------
# Containers (used at file and report boundaries)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarVolume:
    """Intensity grid with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        data = check_volume(self.data, "ScalarVolume.data")
        object.__setattr__(self, "data", data)
        object.__setattr__(
            self, "spacing", tuple(check_spacing(self.spacing, data.ndim)))

    @property
    def dims(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim


@dataclass(frozen=True)
class DisplacementField:
    """Channel-first displacement ``(d, *dims)`` in voxel units."""

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        data = check_field(self.data, "DisplacementField.data")
        object.__setattr__(self, "data", data)
        object.__setattr__(
            self, "spacing", tuple(check_spacing(self.spacing, data.shape[0])))

    @property
    def dims(self):
        return self.data.shape[1:]

    @property
    def ndim(self):
        return self.data.shape[0]

    @classmethod
    def zeros(cls, dims, spacing=None):
        return cls(np.zeros((len(dims),) + tuple(dims)), spacing)


@dataclass(frozen=True)
class LabelVolume:
    """Integer label map; label 0 is background."""

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim not in (2, 3):
            raise ValueError(f"LabelVolume must be 2D or 3D, got {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise ValueError("LabelVolume data must be integer valued")
            data = data.astype(np.int64)
        if data.size and data.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "data", data)
        object.__setattr__(
            self, "spacing", tuple(check_spacing(self.spacing, data.ndim)))

    @property
    def dims(self):
        return self.data.shape

    @property
    def labels(self):
        """Sorted foreground labels present in the map."""
        return [int(v) for v in np.unique(self.data) if v != 0]


@dataclass(frozen=True)
class LandmarkSet:
    """Points in voxel coordinates of a reference grid, shape ``(n, d)``."""

    points: np.ndarray
    names: Optional[Sequence[str]] = None
    dims: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            ndim = len(self.dims) if self.dims is not None else 3
            pts = pts.reshape(0, ndim)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ValueError(f"landmarks must have shape (n, d), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmarks contain non-finite coordinates")
        if self.dims is not None:
            hi = np.asarray(self.dims, dtype=np.float64) - 1
            if np.any(pts < 0) or np.any(pts > hi):
                raise ValueError("landmark outside the reference grid")
        if self.names is not None and len(self.names) != len(pts):
            raise ValueError("names and points differ in length")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

def identity_grid(dims):
    """Voxel coordinates of every grid point, shape ``(d, *dims)``."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims],
                                indexing="ij"))


def interpolate(data, coords, channel_axis=False):
    """d-linear interpolation with clamp-to-edge borders.

    Parameters
    ----------
    data : ndarray
        Grid of shape ``dims`` or, with ``channel_axis=True``, ``(C, *dims)``.
        All channels share the interpolation weights.
    coords : ndarray
        Sample positions of shape ``(d, *out_shape)`` in voxel coordinates.

    Returns
    -------
    ndarray of shape ``out_shape`` or ``(C, *out_shape)``.
    """
    data = np.asarray(data, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    dims = data.shape[1:] if channel_axis else data.shape
    d = len(dims)
    if coords.shape[0] != d:
        raise ValueError(f"coords have {coords.shape[0]} components, grid is {d}D")
    if not np.all(np.isfinite(coords)):
        raise ValueError("non-finite sample coordinates")

    lo_idx, hi_idx, w_hi = [], [], []
    for k, n in enumerate(dims):
        c = np.clip(coords[k], 0.0, n - 1)
        i0 = np.clip(np.floor(c).astype(np.intp), 0, max(n - 2, 0))
        lo_idx.append(i0)
        hi_idx.append(np.minimum(i0 + 1, n - 1))
        w_hi.append(c - i0)

    out = None
    for corner in product((0, 1), repeat=d):
        idx = tuple(hi_idx[k] if bit else lo_idx[k] for k, bit in enumerate(corner))
        w = None
        for k, bit in enumerate(corner):
            wk = w_hi[k] if bit else 1.0 - w_hi[k]
            w = wk if w is None else w * wk
        vals = data[(slice(None),) + idx] if channel_axis else data[idx]
        term = vals * w
        out = term if out is None else out + term
    return out


def sample_linear(vol, point):
    """Interpolate a scalar volume at a single point given in voxel coordinates."""
    vol = np.asarray(vol, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    if point.size != vol.ndim:
        raise ValueError(f"point has {point.size} coordinates, volume is {vol.ndim}D")
    if not np.all(np.isfinite(point)):
        raise ValueError("non-finite sample point")
    return float(interpolate(vol, point.reshape(vol.ndim, 1))[0])


def sample_field(u, points):
    """Interpolate each displacement component at ``points`` of shape (n, d)."""
    u = np.asarray(u, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, u.shape[0]))
    return interpolate(u, pts.T, channel_axis=True).T


def warp(vol, u):
    """Backward-warp a scalar volume: ``out(x) = vol(x + u(x))``."""
    vol = check_volume(vol)
    u = check_field(u)
    check_same_grid(vol.shape, u.shape[1:], ("volume", "displacement"))
    return interpolate(vol, identity_grid(vol.shape) + u)


def warp_channels(data, u):
    """Backward-warp every channel of a ``(C, *dims)`` array through ``u``."""
    data = np.asarray(data, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    check_same_grid(data.shape[1:], u.shape[1:], ("channels", "displacement"))
    return interpolate(data, identity_grid(u.shape[1:]) + u, channel_axis=True)


def warp_labels(labels, u):
    """Nearest-neighbour backward warp of an integer label map."""
    labels = np.asarray(labels)
    u = check_field(u)
    check_same_grid(labels.shape, u.shape[1:], ("labels", "displacement"))
    coords = identity_grid(labels.shape) + u
    idx = tuple(np.clip(np.floor(coords[k] + 0.5).astype(np.intp), 0, n - 1)
                for k, n in enumerate(labels.shape))
    return labels[idx]


def compose(u1, u2):
    """Displacement of applying ``phi1`` then ``phi2``.

    ``result(x) = u1(x) + u2(x + u1(x))`` with ``u2`` interpolated
    componentwise, so that ``warp(vol, compose(u1, u2))`` matches
    ``warp(warp(vol, u2), u1)``.
    """
    u1 = check_field(u1, "u1")
    u2 = check_field(u2, "u2")
    check_same_grid(u1.shape, u2.shape, ("u1", "u2"))
    return u1 + interpolate(u2, identity_grid(u1.shape[1:]) + u1,
                            channel_axis=True)


# ---------------------------------------------------------------------------
# Resolution changes
# ---------------------------------------------------------------------------

def pooled_shape(dims):
    """Extent after one 2x pooling step (ceil-half on every axis)."""
    return tuple((n + 1) // 2 for n in dims)


def upsample_flow(u, target_dims=None):
    """Upsample a displacement field by 2 and rescale its vectors by 2.

    Coarse voxel ``i`` is centred on fine coordinate ``2 i + 0.5``, matching
    the 2-voxel windows of :func:`downsample_avg`. ``target_dims`` caps the
    output extent for grids with odd sizes.
    """
    u = check_field(u)
    coarse = u.shape[1:]
    if target_dims is None:
        target_dims = tuple(2 * n for n in coarse)
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != len(coarse):
        raise ValueError("target_dims rank differs from the field")
    for n, t in zip(coarse, target_dims):
        if not (2 * n - 1 <= t <= 2 * n):
            raise ValueError(
                f"target extent {target_dims} is not 2x of coarse {coarse}")
    coords = (identity_grid(target_dims) - 0.5) / 2.0
    return 2.0 * interpolate(u, coords, channel_axis=True)


def downsample_avg(vol):
    """Average-pool non-overlapping 2^d windows.

    A trailing odd slice is pooled over its truncated window, so every
    output voxel is the mean of real input voxels.
    """
    vol = np.asarray(vol, dtype=np.float64)
    if min(vol.shape) < 2:
        raise ValueError(f"cannot pool an axis shorter than 2, got {vol.shape}")
    out = vol
    for axis, n in enumerate(vol.shape):
        even = n - (n % 2)
        head = np.take(out, np.arange(0, even, 2), axis=axis)
        head = (head + np.take(out, np.arange(1, even, 2), axis=axis)) / 2.0
        if n % 2:
            tail = np.take(out, [n - 1], axis=axis)
            head = np.concatenate([head, tail], axis=axis)
        out = head
    return out


def downsample_stride(u):
    """Take every second voxel of a field and halve its vectors.

    Inverse of :func:`upsample_flow` for constant fields; used in tests.
    """
    u = check_field(u)
    sl = (slice(None),) + tuple(slice(0, None, 2) for _ in u.shape[1:])
    return u[sl] / 2.0
