"""Synthetic phantoms and ground-truth deformations.

Random draws use ``numpy.random.Generator(numpy.random.Philox(seed))``,
a 64-bit counter-based generator whose output is platform independent.

A generated field ``u_true`` is the exact answer of the pair it produces:
the fixed image is the phantom warped by ``u_true`` and the moving image is
the phantom itself, so ``warp(moving, u_true) == fixed``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .features import gaussian_smooth
from .regularity import jacobian_det, ndv
from .volume import (LandmarkSet, compose, identity_grid, sample_field, warp,
                     warp_labels)

__all__ = [
    "Phantom", "GeneratorField", "SyntheticPair", "rng_from_seed",
    "make_phantom", "make_field", "apply_ground_truth", "invert_field",
    "invert_points",
]

MIN_EXTENT = 16
MAX_RETRIES = 8
BLOB_SIGMA = (0.06, 0.09)


def rng_from_seed(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class Phantom:
    image: np.ndarray
    labels: np.ndarray
    landmarks: LandmarkSet
    seed: int
    kind: str
    sibling: Optional[np.ndarray] = None


@dataclass
class GeneratorField:
    u_true: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    max_disp: float = 0.0


@dataclass
class SyntheticPair:
    fixed: np.ndarray
    moving: np.ndarray
    fixed_labels: np.ndarray
    moving_labels: np.ndarray
    fixed_landmarks: LandmarkSet
    moving_landmarks: LandmarkSet
    u_true: np.ndarray


def _blob_layout(rng, dims, n_blobs):
    dims = np.asarray(dims, dtype=np.float64)
    lo = dims * 0.22
    hi = dims * 0.78
    min_sep = 0.22 * dims.min()
    centers = []
    for _ in range(1000):
        c = np.round(rng.uniform(lo, hi))
        if all(np.linalg.norm(c - o) >= min_sep for o in centers):
            centers.append(c)
            if len(centers) == n_blobs:
                break
    if len(centers) < n_blobs:
        raise ValueError(f"cannot place {n_blobs} separated blobs in {tuple(dims)}")
    sigmas = rng.uniform(*BLOB_SIGMA, size=n_blobs) * dims.min()
    amps = rng.uniform(0.6, 1.0, size=n_blobs)
    return np.array(centers), sigmas, amps


def _blob_images(dims, centers, sigmas):
    grid = identity_grid(dims)
    out = []
    for c, s in zip(centers, sigmas):
        r2 = sum((grid[k] - c[k]) ** 2 for k in range(len(dims)))
        out.append(np.exp(-0.5 * r2 / s ** 2))
    return np.stack(out)


def make_phantom(kind="blobs", dims=(64, 64, 64), seed=0, n_blobs=5,
                 period=8, texture=0.0, texture_sigma=1.5):
    """Build a labelled test phantom.

    Parameters
    ----------
    kind : {"blobs", "grid", "two-tissue"}
        ``blobs``: Gaussian blobs, one label and one centre landmark each.
        ``grid``: bright line grid every ``period`` voxels.
        ``two-tissue``: piecewise-constant bimodal image with an
        intensity-inverted ``sibling``.
    dims : tuple of int
        Grid extent, at least 16 per axis.
    texture : float
        Standard deviation of a smoothed-noise texture (correlation length
        ``texture_sigma`` voxels) added to ``blobs`` images.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) not in (2, 3) or min(dims) < MIN_EXTENT:
        raise ValueError(f"phantom dims must be >= {MIN_EXTENT} per axis, got {dims}")
    rng = rng_from_seed(seed)

    if kind == "blobs":
        centers, sigmas, amps = _blob_layout(rng, dims, n_blobs)
        blobs = _blob_images(dims, centers, sigmas)
        image = np.einsum("k...,k->...", blobs, amps)
        if texture > 0:
            noise = gaussian_smooth(rng.normal(size=dims), texture_sigma)
            image = image + texture * noise / noise.std()
        labels = np.where(blobs.max(axis=0) >= np.exp(-0.5 * 1.5 ** 2),
                          blobs.argmax(axis=0) + 1, 0)
        return Phantom(image, labels.astype(np.int16),
                       LandmarkSet(centers, dims=dims), seed, kind)

    if kind == "two-tissue":
        centers, sigmas, _ = _blob_layout(rng, dims, n_blobs)
        blobs = _blob_images(dims, centers, sigmas * 1.6)
        inside = blobs.max(axis=0) >= np.exp(-0.5 * 1.5 ** 2)
        labels = np.where(inside, blobs.argmax(axis=0) + 1, 0)
        image = gaussian_smooth(np.where(inside, 0.8, 0.25), 1.0)
        return Phantom(image, labels.astype(np.int16),
                       LandmarkSet(centers, dims=dims), seed, kind,
                       sibling=1.0 - image)

    if kind == "grid":
        grid = identity_grid(dims)
        phase = rng.integers(0, period, size=len(dims))
        lines = np.zeros(dims)
        for k in range(len(dims)):
            dist = np.abs(((grid[k] - phase[k]) + period / 2) % period - period / 2)
            lines = np.maximum(lines, np.exp(-0.5 * (dist / 1.0) ** 2))
        labels = (lines > 0.5).astype(np.int16)
        ticks = [np.arange(p + period, n - period, period)
                 for p, n in zip(phase, dims)]
        pts = np.array(np.meshgrid(*ticks, indexing="ij")).reshape(len(dims), -1).T
        return Phantom(lines, labels, LandmarkSet(pts.astype(float), dims=dims),
                       seed, kind)

    raise ValueError(f"unknown phantom kind {kind!r}")


def _rotation(angles):
    if len(angles) == 1:
        c, s = np.cos(angles[0]), np.sin(angles[0])
        return np.array([[c, -s], [s, c]])
    rot = np.eye(3)
    for axis, a in enumerate(angles):
        c, s = np.cos(a), np.sin(a)
        i, j = [k for k in range(3) if k != axis]
        r = np.eye(3)
        r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
        rot = rot @ r
    return rot


def _max_norm(u):
    return float(np.sqrt(np.sum(u * u, axis=0)).max()) if u.size else 0.0


def make_field(kind="gaussian-bumps", dims=(64, 64, 64), max_disp=8.0, seed=0,
               n_bumps=4, width=None, scale=None, rotation=None,
               translation=None):
    """Draw a fold-free ground-truth displacement field.

    ``gaussian-bumps`` sums ``n_bumps`` Gaussian-windowed random vectors and
    rescales the sum so that the largest displacement norm equals
    ``max_disp``. ``affine`` builds ``(A - I)(x - c) + t`` from a rotation,
    isotropic scale and translation; explicitly passed parameters are used
    as given, otherwise random ones are drawn and rescaled to ``max_disp``.

    If the field folds, its amplitude is damped by 0.8 and re-checked, at
    most 8 times.
    """
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    if d not in (2, 3):
        raise ValueError("dims must describe a 2D or 3D grid")
    if not 0 <= max_disp < min(dims) / 4:
        raise ValueError(f"max_disp must be in [0, {min(dims) / 4}), got {max_disp}")
    rng = rng_from_seed(seed)
    grid = identity_grid(dims)
    params = {"seed": int(seed)}

    if max_disp == 0 and kind != "affine":
        return GeneratorField(np.zeros((d,) + dims), kind, params, 0.0)

    if kind == "gaussian-bumps":
        width = float(width) if width is not None else min(dims) / 3.5
        u = np.zeros((d,) + dims)
        for _ in range(n_bumps):
            center = rng.uniform(0, np.asarray(dims) - 1)
            vec = rng.normal(size=d)
            vec /= np.linalg.norm(vec)
            r2 = sum((grid[k] - center[k]) ** 2 for k in range(d))
            u += vec.reshape((d,) + (1,) * d) * np.exp(-0.5 * r2 / width ** 2)
        u *= max_disp / _max_norm(u)
        params.update(n_bumps=n_bumps, width=width)
    elif kind == "affine":
        explicit = (scale is not None or rotation is not None
                    or translation is not None)
        n_angles = 1 if d == 2 else 3
        angles = (np.zeros(n_angles) if rotation is None and explicit
                  else rng.uniform(-0.08, 0.08, n_angles) if rotation is None
                  else np.broadcast_to(np.asarray(rotation, float), (n_angles,)))
        s = (1.0 if explicit else rng.uniform(0.95, 1.05)) if scale is None else float(scale)
        t = (np.zeros(d) if explicit else rng.uniform(-1, 1, d)) \
            if translation is None else np.asarray(translation, float)
        mat = _rotation(angles) * s
        center = (np.asarray(dims) - 1) / 2.0
        rel = grid - center.reshape((d,) + (1,) * d)
        u = np.einsum("ij,j...->i...", mat - np.eye(d), rel)
        u += t.reshape((d,) + (1,) * d)
        if not explicit and _max_norm(u) > 0:
            u *= max_disp / _max_norm(u)
        params.update(rotation=[float(a) for a in angles], scale=float(s),
                      translation=[float(v) for v in t])
    else:
        raise ValueError(f"unknown field kind {kind!r}")

    for _ in range(MAX_RETRIES + 1):
        if ndv(jacobian_det(u)) == 0:
            return GeneratorField(u, kind, params, _max_norm(u))
        u = u * 0.8
    raise RuntimeError("could not generate a fold-free field")


def invert_field(u, iterations=20):
    """Fixed-point inverse ``v <- -u(x + v)``, so ``compose(v, u) ~ 0``."""
    u = np.asarray(u, dtype=np.float64)
    v = -u.copy()
    for _ in range(iterations):
        # compose(v, u) - v is u sampled at x + v(x)
        v = v - compose(v, u)
    return v


def invert_points(u, targets, iterations=50):
    """Solve ``p + u(p) = c`` for each target ``c`` by fixed-point iteration."""
    targets = np.asarray(targets, dtype=np.float64)
    hi = np.asarray(u.shape[1:], dtype=np.float64) - 1
    p = targets.copy()
    for _ in range(iterations):
        p = np.clip(targets - sample_field(u, p), 0, hi)
    return p


def apply_ground_truth(phantom, gen, multimodal=False):
    """Turn a phantom and a generator field into a registration problem.

    The fixed image is the phantom warped by ``u_true`` (labels with nearest
    neighbour), the moving image is the phantom itself, or its sibling when
    ``multimodal`` is set. Moving landmarks are the phantom landmarks; fixed
    landmarks are their pre-images under ``x + u_true(x)``.
    """
    u = gen.u_true if isinstance(gen, GeneratorField) else np.asarray(gen)
    if u.shape[1:] != phantom.image.shape:
        raise ValueError(
            f"field dims {u.shape[1:]} differ from phantom {phantom.image.shape}")
    moving = phantom.image
    if multimodal:
        if phantom.sibling is None:
            raise ValueError(f"phantom kind {phantom.kind!r} has no sibling")
        moving = phantom.sibling
    fixed = warp(phantom.image, u)
    fixed_labels = warp_labels(phantom.labels, u)
    targets = phantom.landmarks.points
    fixed_pts = invert_points(u, targets)
    dims = phantom.image.shape
    return SyntheticPair(
        fixed=fixed, moving=moving.copy(),
        fixed_labels=fixed_labels, moving_labels=phantom.labels.copy(),
        fixed_landmarks=LandmarkSet(fixed_pts, dims=dims),
        moving_landmarks=LandmarkSet(targets.copy(), dims=dims),
        u_true=u)
