"""scikit-learn style wrapper around :func:`regmod.engine.register`."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_volume
from .engine import preset, register
from .volume import warp

__all__ = ["DeformableRegistration"]


class DeformableRegistration(BaseEstimator, TransformerMixin):
    """Pairwise deformable registration.

    Parameters
    ----------
    preset : {"BASE", "D", "DWP", "DWCP", "DWCPI"}
        Rung of the block ladder.
    similarity : {"lncc", "mse", "mind"}
    levels, iterations : int
        Pyramid depth and gradient steps per level.
    reg_weight : float, optional
        Diffusion weight; ``None`` takes the default of the similarity.
    step_size, fluid_sigma : float
        Largest voxel update at level 1 and gradient smoothing width.
    lncc_window, corr_radius : int
    direction : {"fwd", "bwd", "both"}

    Attributes
    ----------
    displacement_ : ndarray of shape (d, *dims)
        Full-resolution field; ``warp(moving, displacement_)`` lands on the
        fixed image.
    displacement_half_ : ndarray
        Level-1 field the full one is upsampled from.
    diagnostics_ : dict
    backward_ : RegResult or None
        Reverse direction when ``direction="both"``.
    """

    def __init__(self, preset="DWCPI", similarity="lncc", levels=4,
                 iterations=30, reg_weight=None, step_size=0.5,
                 fluid_sigma=1.0, lncc_window=9, corr_radius=1,
                 direction="fwd"):
        self.preset = preset
        self.similarity = similarity
        self.levels = levels
        self.iterations = iterations
        self.reg_weight = reg_weight
        self.step_size = step_size
        self.fluid_sigma = fluid_sigma
        self.lncc_window = lncc_window
        self.corr_radius = corr_radius
        self.direction = direction

    def make_config(self):
        """The :class:`RegConfig` this estimator would run."""
        overrides = dict(step_size=self.step_size,
                         fluid_sigma=self.fluid_sigma,
                         lncc_window=self.lncc_window,
                         corr_radius=self.corr_radius)
        if self.reg_weight is not None:
            overrides["reg_weight"] = self.reg_weight
        return preset(self.preset, similarity=self.similarity,
                      levels=self.levels, iterations=self.iterations,
                      **overrides)

    def fit(self, X, y):
        """Register moving image ``y`` onto fixed image ``X``."""
        fixed = check_volume(X, "fixed")
        moving = check_volume(y, "moving")
        result = register(fixed, moving, self.make_config(),
                          direction=self.direction)
        self.displacement_ = result.displacement
        self.displacement_half_ = result.displacement_half
        self.diagnostics_ = result.diagnostics
        self.backward_ = result.backward
        self.n_features_in_ = int(np.prod(fixed.shape))
        return self

    def transform(self, X):
        """Warp an image on the moving grid into the fixed frame."""
        if not hasattr(self, "displacement_"):
            raise NotFittedError(
                "DeformableRegistration is not fitted; call fit first")
        return warp(X, self.displacement_)

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ValueError("fit_transform needs the moving image as y")
        return self.fit(X, y).transform(y)
