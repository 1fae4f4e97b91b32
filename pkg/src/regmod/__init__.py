"""Modular deformable image registration.

Toggleable blocks (dual feature encoding, motion pyramid, correlation
proposals, iterative refinement) around a variational optimiser, with
evaluation metrics, synthetic ground truth and a NIfTI command line.
"""

from .engine import (EvalInputs, NumericalError, PRESETS, RegConfig,
                     RegResult, preset, register)
from .estimator import DeformableRegistration
from .features import FeatureEncoder, FeatureSpec, build_pyramid, mind_ssc
from .metrics import dice, nsd, surface_distances, tre
from .regularity import diffusion, jacobian_det, ndv, sd_log_j
from .similarity import correlation_volume, lncc, mind_loss, mse
from .volume import (DisplacementField, LabelVolume, LandmarkSet,
                     ScalarVolume, compose, upsample_flow, warp)

__version__ = "0.1.0"

__all__ = [
    "EvalInputs", "NumericalError", "PRESETS", "RegConfig", "RegResult",
    "preset", "register", "DeformableRegistration", "FeatureEncoder",
    "FeatureSpec", "build_pyramid", "mind_ssc", "dice", "nsd",
    "surface_distances", "tre", "diffusion", "jacobian_det", "ndv",
    "sd_log_j", "correlation_volume", "lncc", "mind_loss", "mse",
    "DisplacementField", "LabelVolume", "LandmarkSet", "ScalarVolume",
    "compose", "upsample_flow", "warp",
]
