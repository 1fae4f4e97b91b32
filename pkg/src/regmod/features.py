"""Hand-crafted dual-stream feature pyramids.

Each image is encoded on its own, with the same procedure, into a stack of
multi-channel feature maps at 1/2, 1/4, ... resolution. Channels are a
smoothed intensity, its spatial gradients and optionally the 12 MIND-SSC
self-similarity channels.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.ndimage import correlate1d, uniform_filter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_volume
from .volume import downsample_avg

__all__ = [
    "FeatureSpec", "FeaturePyramid", "FeatureEncoder", "gaussian_kernel",
    "gaussian_smooth", "spatial_gradients", "mind_ssc", "mind_offsets",
    "build_pyramid", "feature_channels",
]


def gaussian_kernel(sigma):
    """Sampled Gaussian truncated at ``ceil(3 sigma)`` and renormalised."""
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(vol, sigma, channel_axis=False):
    """Separable Gaussian smoothing with edge replication at the borders.

    Parameters
    ----------
    vol : ndarray
        Volume, or ``(C, *dims)`` stack when ``channel_axis`` is set.
    sigma : float
        Standard deviation in voxels. ``0`` returns a copy.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    out = np.array(vol, dtype=np.float64)
    if sigma == 0:
        return out
    k = gaussian_kernel(sigma)
    first = 1 if channel_axis else 0
    for axis in range(first, out.ndim):
        out = correlate1d(out, k, axis=axis, mode="nearest")
    return out


def spatial_gradients(vol):
    """Central differences in the interior, one-sided at the borders.

    Returns an array of shape ``(d, *dims)`` in intensity per voxel.
    """
    vol = check_volume(vol, min_size=2)
    return np.stack(np.gradient(vol))


def mind_offsets():
    """The 12 pairs of six-neighbourhood offsets at squared distance 2.

    Returns two ``(12, 3)`` integer arrays; channel ``k`` compares the
    neighbours ``first[k]`` and ``second[k]``.
    """
    six = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0],
                    [0, 1, 0], [0, 0, -1], [0, 0, 1]])
    first, second = [], []
    for i in range(6):
        for j in range(i + 1, 6):
            if np.sum((six[i] - six[j]) ** 2) == 2:
                first.append(six[i])
                second.append(six[j])
    return np.array(first), np.array(second)


def _shift_clamped(vol, offset):
    idx = np.ix_(*[np.clip(np.arange(n) + o, 0, n - 1)
                   for n, o in zip(vol.shape, offset)])
    return vol[idx]


def mind_ssc(vol, radius=2, dilation=2, variance_floor=1e-6):
    """MIND self-similarity-context descriptor of a 3D volume.

    For each of the 12 neighbour pairs, the squared intensity difference
    between the two dilated neighbours is box-averaged over a patch of the
    given radius. The resulting distances ``D_k`` are normalised by their
    per-voxel mean ``V`` and mapped through ``exp(-D_k / V)``.

    Parameters
    ----------
    vol : ndarray, 3D
    radius : int
        Patch radius of the box filter.
    dilation : int
        Spacing of the six-neighbourhood samples.
    variance_floor : float
        ``V`` is clamped below by this fraction of the global intensity
        variance.

    Returns
    -------
    ndarray of shape ``(12, *vol.shape)`` with values in (0, 1].
    """
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim != 3:
        raise ValueError(f"MIND-SSC needs a 3D volume, got shape {vol.shape}")
    vol = check_volume(vol, allow_2d=False)
    if radius < 1 or dilation < 1:
        raise ValueError("radius and dilation must be >= 1")
    first, second = mind_offsets()
    size = 2 * int(radius) + 1
    dist = np.empty((12,) + vol.shape)
    for k in range(12):
        diff = (_shift_clamped(vol, dilation * first[k])
                - _shift_clamped(vol, dilation * second[k]))
        dist[k] = uniform_filter(diff * diff, size=size, mode="nearest")
    var = dist.mean(axis=0)
    floor = max(variance_floor * float(vol.var()), 1e-12)
    var = np.maximum(var, floor)
    return np.exp(-dist / var)


@dataclass
class FeatureSpec:
    """Which channels the encoder produces at every level."""

    smoothing: float = 0.5
    mind: bool = False
    mind_radius: int = 2
    mind_dilation: int = 2

    def n_channels(self, ndim):
        return 1 + ndim + (12 if self.mind else 0)


@dataclass
class FeaturePyramid:
    """Level-0 image plus per-level images and features.

    ``images[l]`` and ``features[l]`` hold level ``l`` (resolution
    ``2**-l``); ``features[0]`` is ``None``.
    """

    images: List[np.ndarray]
    features: List[np.ndarray] = field(default_factory=list)

    @property
    def levels(self):
        return len(self.images) - 1

    def dims(self, level):
        return self.images[level].shape


def feature_channels(img, spec):
    """Per-level channel stack ``[smoothed, gradients..., mind...]``."""
    smooth = gaussian_smooth(img, spec.smoothing)
    parts = [smooth[None], spatial_gradients(smooth)]
    if spec.mind:
        if img.ndim != 3:
            raise ValueError("MIND features require 3D volumes")
        parts.append(mind_ssc(img, spec.mind_radius, spec.mind_dilation))
    return np.concatenate(parts, axis=0)


def build_pyramid(vol, levels, spec=None, features=True):
    """Encode one image into an average-pooled feature pyramid.

    The procedure looks at a single image only, so pyramids for the fixed
    and moving images never share information.
    """
    vol = check_volume(vol)
    levels = int(levels)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(vol.shape) < 2 ** levels:
        raise ValueError(
            f"volume {vol.shape} too small for {levels} pyramid levels")
    spec = spec if spec is not None else FeatureSpec()
    images = [vol]
    for _ in range(levels):
        images.append(downsample_avg(images[-1]))
    feats = [None]
    for lvl in range(1, levels + 1):
        feats.append(feature_channels(images[lvl], spec) if features else None)
    return FeaturePyramid(images, feats)


class FeatureEncoder(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping :func:`build_pyramid`.

    ``fit`` is a no-op kept for pipeline compatibility; ``transform`` maps a
    volume to its :class:`FeaturePyramid`.
    """

    def __init__(self, levels=4, smoothing=0.5, mind=False, mind_radius=2,
                 mind_dilation=2):
        self.levels = levels
        self.smoothing = smoothing
        self.mind = mind
        self.mind_radius = mind_radius
        self.mind_dilation = mind_dilation

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        spec = FeatureSpec(self.smoothing, self.mind, self.mind_radius,
                           self.mind_dilation)
        return build_pyramid(X, self.levels, spec)
