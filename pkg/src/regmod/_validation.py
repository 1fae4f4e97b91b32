"""Input validation helpers shared by every module."""

import numpy as np


def check_volume(vol, name="volume", min_size=1, allow_2d=True):
    """Validate a scalar volume and return it as a float64 array.

    Parameters
    ----------
    vol : array_like
        2D or 3D intensity grid.
    name : str
        Used in error messages.
    min_size : int
        Minimum extent required on every axis.
    allow_2d : bool
        Whether 2D inputs are accepted.
    """
    arr = np.asarray(vol, dtype=np.float64)
    ndim_ok = (2, 3) if allow_2d else (3,)
    if arr.ndim not in ndim_ok:
        raise ValueError(
            f"{name} must be {' or '.join(f'{n}D' for n in ndim_ok)}, "
            f"got shape {arr.shape}")
    if min(arr.shape) < min_size:
        raise ValueError(
            f"{name} needs at least {min_size} voxels per axis, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_field(u, name="displacement", min_size=1):
    """Validate a channel-first displacement field of shape ``(d, *dims)``."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim not in (3, 4) or arr.shape[0] != arr.ndim - 1:
        raise ValueError(
            f"{name} must have shape (d, *dims) with d in {{2, 3}}, "
            f"got {arr.shape}")
    if min(arr.shape[1:]) < min_size:
        raise ValueError(
            f"{name} needs at least {min_size} voxels per axis, "
            f"got {arr.shape[1:]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_feature_volume(f, name="features"):
    """Validate a channel-first feature volume of shape ``(C, *dims)``."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim not in (3, 4) or arr.shape[0] < 1:
        raise ValueError(
            f"{name} must have shape (C, *dims) with 2 or 3 spatial axes, "
            f"got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_grid(a, b, names=("a", "b")):
    """Raise if two spatial extents differ. ``a`` and ``b`` are dims tuples."""
    if tuple(a) != tuple(b):
        raise ValueError(
            f"grid mismatch: {names[0]} has dims {tuple(a)}, "
            f"{names[1]} has dims {tuple(b)}")


def check_spacing(spacing, ndim):
    if spacing is None:
        return np.ones(ndim)
    sp = np.asarray(spacing, dtype=np.float64).reshape(-1)
    if sp.size == 1:
        sp = np.repeat(sp, ndim)
    if sp.size != ndim:
        raise ValueError(f"spacing must have {ndim} entries, got {sp.size}")
    if not np.all(sp > 0) or not np.all(np.isfinite(sp)):
        raise ValueError(f"spacing must be strictly positive, got {sp}")
    return sp
