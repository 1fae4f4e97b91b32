"""Coarse-to-fine variational registration built from toggleable blocks.

Blocks follow the architecture ladder BASE -> D -> DWP -> DWCP -> DWCPI:

* ``dual``: drive the optimisation with independently encoded feature
  pyramids instead of raw intensities.
* ``pyramid``: estimate from level ``L`` down to level 1, each level
  initialised by the upsampled and x2 rescaled coarser field.
* ``correlation``: at the start of every round, match fixed features
  against the currently warped moving features in a ``(2r+1)^d``
  neighbourhood and compose the smoothed argmax proposal onto the field.
* ``iterative``: run several warp-then-update rounds per level.

The finest estimated level is 1 (half resolution); the full-resolution
field is its upsampled version.
"""

import copy
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

import numpy as np

from ._validation import check_same_grid, check_spacing, check_volume
from .features import FeatureSpec, build_pyramid, gaussian_smooth, mind_ssc
from .features import spatial_gradients
from .metrics import dice, tre
from .regularity import diffusion, jacobian_det, ndv, sd_log_j
from .similarity import (correlation_volume, corr_argmax_proposal, lncc,
                         mind_displacement_gradient, mind_loss, mse)
from .volume import compose, upsample_flow, warp, warp_channels, warp_labels

__all__ = [
    "RegConfig", "RegResult", "EvalInputs", "NumericalError", "PRESETS",
    "preset", "register", "pyramid_loss", "pyramid_weights",
    "level_snapshot", "similarity_value",
]

logger = logging.getLogger(__name__)

SIMILARITIES = ("mse", "lncc", "mind")
PRESETS = ("BASE", "D", "DWP", "DWCP", "DWCPI")
# regularisation weights per similarity, mirroring the per-task settings
DEFAULT_REG_WEIGHT = {"lncc": 0.5, "mind": 1.0, "mse": 0.05}


class NumericalError(ArithmeticError):
    """Raised when the objective becomes non-finite; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class RegConfig:
    """Validated registration settings.

    ``iterations`` and ``refine`` hold one entry per level, index ``l - 1``
    for level ``l``.
    """

    levels: int = 4
    iterations: Tuple[int, ...] = (30, 30, 30, 30)
    step_size: float = 0.5
    step_decay: float = 0.5
    fluid_sigma: float = 1.0
    similarity: str = "lncc"
    lncc_window: int = 9
    mind_radius: int = 2
    mind_dilation: int = 2
    reg_weight: float = 0.5
    dual: bool = True
    pyramid: bool = True
    correlation: bool = False
    corr_radius: int = 1
    refine: Tuple[int, ...] = (1, 1, 1, 1)
    proposal_sigma: float = 1.0
    proposal_tie_tol: float = 1e-2
    proposal_scales: Tuple[float, ...] = (1.0, 0.5, 0.25)
    bidirectional: bool = False
    features: FeatureSpec = field(default_factory=FeatureSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = FeatureSpec(**self.features)
        self.iterations = _per_level(self.iterations, self.levels, "iterations")
        self.refine = _per_level(self.refine, self.levels, "refine")
        self.validate()

    def validate(self):
        if int(self.levels) < 1:
            raise ValueError("levels must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must be in (0, 1]")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.fluid_sigma < 0 or self.proposal_sigma < 0:
            raise ValueError("smoothing sigmas must be >= 0")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}")
        if self.similarity == "lncc" and (self.lncc_window < 3
                                          or self.lncc_window % 2 == 0):
            raise ValueError("lncc_window must be odd and >= 3")
        if self.correlation and self.corr_radius < 1:
            raise ValueError("corr_radius must be >= 1 when correlation is on")
        if any(n < 0 for n in self.iterations):
            raise ValueError("iterations must be >= 0")
        if any(r < 1 for r in self.refine):
            raise ValueError("refine counts must be >= 1")
        self.proposal_scales = tuple(float(v) for v in self.proposal_scales)
        if not self.proposal_scales or any(v <= 0 for v in self.proposal_scales):
            raise ValueError("proposal_scales must be positive")

    @property
    def active_levels(self):
        """Levels visited, coarsest first."""
        return list(range(self.levels, 0, -1)) if self.pyramid else [1]

    @property
    def iterative(self):
        return any(r > 1 for r in self.refine)

    def to_dict(self):
        out = asdict(self)
        out["iterations"] = list(self.iterations)
        out["refine"] = list(self.refine)
        out["proposal_scales"] = list(self.proposal_scales)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(data))


def _per_level(values, levels, name):
    if np.isscalar(values):
        return tuple(int(values) for _ in range(levels))
    values = tuple(int(v) for v in values)
    if len(values) != levels:
        raise ValueError(f"{name} needs {levels} entries, got {len(values)}")
    return values


def preset(name, similarity="lncc", levels=4, iterations=30, **overrides):
    """Configuration of one rung of the block ladder.

    Every preset spends ``levels * iterations`` gradient steps per round
    schedule, at level 1 alone when the pyramid is off. ``DWCPI`` runs a
    second round at levels 2 and 1 on top of that.
    """
    name = name.upper()
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    pyramid = name in ("DWP", "DWCP", "DWCPI")
    n_levels = levels if pyramid else 1
    per_level = (tuple(iterations for _ in range(levels)) if pyramid
                 else (iterations * levels,))
    refine = tuple(2 if (name == "DWCPI" and lvl in (1, 2)) else 1
                   for lvl in range(1, n_levels + 1))
    kwargs = dict(
        levels=n_levels, iterations=per_level, similarity=similarity,
        reg_weight=DEFAULT_REG_WEIGHT[similarity],
        dual=name != "BASE", pyramid=pyramid,
        correlation=name in ("DWCP", "DWCPI"), corr_radius=1, refine=refine,
        features=FeatureSpec(mind=similarity == "mind"),
    )
    kwargs.update(overrides)
    return RegConfig(**kwargs)


@dataclass
class EvalInputs:
    """Optional evaluation data for per-level snapshots (never used to fit)."""

    fixed_landmarks: Optional[np.ndarray] = None
    moving_landmarks: Optional[np.ndarray] = None
    fixed_labels: Optional[np.ndarray] = None
    moving_labels: Optional[np.ndarray] = None
    spacing: Optional[tuple] = None

    @property
    def has_landmarks(self):
        return self.fixed_landmarks is not None and self.moving_landmarks is not None

    @property
    def has_labels(self):
        return self.fixed_labels is not None and self.moving_labels is not None


@dataclass
class RegResult:
    displacement_half: np.ndarray
    displacement: np.ndarray
    diagnostics: dict
    direction: str = "fwd"
    backward: Optional["RegResult"] = None


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def similarity_value(cfg, fixed, warped):
    """Image-level similarity under ``cfg`` (no regularisation)."""
    if cfg.similarity == "mse":
        return mse(fixed, warped).value
    if cfg.similarity == "lncc":
        return lncc(fixed, warped, cfg.lncc_window).value
    return mind_loss(fixed, warped, cfg.mind_radius, cfg.mind_dilation).value


class _LevelObjective:
    """Similarity plus weighted diffusion at one pyramid level."""

    def __init__(self, cfg, fixed_img, moving_img, fixed_feat, moving_feat):
        self.cfg = cfg
        self.fixed_img = fixed_img
        self.moving_img = moving_img
        if cfg.similarity == "mind":
            self.fixed_desc = mind_ssc(fixed_img, cfg.mind_radius,
                                       cfg.mind_dilation)
            return
        if cfg.dual:
            n_drive = 1 + fixed_img.ndim
            self.fixed_ch = fixed_feat[:n_drive]
            self.moving_ch = moving_feat[:n_drive]
        else:
            self.fixed_ch = fixed_img[None]
            self.moving_ch = moving_img[None]
        grads = np.stack([spatial_gradients(ch) for ch in self.moving_ch])
        self.moving_grads = grads.reshape((-1,) + fixed_img.shape)
        self.n_ch = len(self.moving_ch)
        self.d = fixed_img.ndim

    def _sim(self, fixed, warped):
        if self.cfg.similarity == "mse":
            return mse(fixed, warped)
        return lncc(fixed, warped, self.cfg.lncc_window)

    def value_and_grad(self, u, with_grad=True):
        cfg = self.cfg
        if cfg.similarity == "mind":
            lv = mind_displacement_gradient(
                self.fixed_img, self.moving_img, u, cfg.mind_radius,
                cfg.mind_dilation, fixed_descriptor=self.fixed_desc)
            sim, g_sim = lv.value, lv.gradient
        else:
            warped = warp_channels(self.moving_ch, u)
            sim = 0.0
            g_sim = np.zeros_like(u) if with_grad else None
            if with_grad:
                # image gradients sampled at x + u, (C, d, *dims)
                wgrad = warp_channels(self.moving_grads, u).reshape(
                    (self.n_ch, self.d) + u.shape[1:])
            for c in range(self.n_ch):
                lv = self._sim(self.fixed_ch[c], warped[c])
                sim += lv.value / self.n_ch
                if with_grad:
                    g_sim += lv.gradient[None] * wgrad[c] / self.n_ch
        reg = diffusion(u)
        value = sim + cfg.reg_weight * reg.value
        if not with_grad:
            return value, sim, None
        return value, sim, g_sim + cfg.reg_weight * reg.gradient


def _normalise_features(f, rel_eps=1e-2):
    norm = np.sqrt(np.sum(f * f, axis=0))
    floor = rel_eps * float(norm.max()) if norm.size else 0.0
    return f / np.maximum(norm, max(floor, 1e-12))


def pyramid_weights(levels):
    """Loss weight ``2**-l`` for each level ``l`` in ``levels``."""
    return [2.0 ** -int(lvl) for lvl in levels]


def pyramid_loss(losses, weights):
    """Scale-weighted sum of per-level losses."""
    losses = list(losses)
    weights = list(weights)
    if len(losses) != len(weights):
        raise ValueError(
            f"{len(losses)} level losses but {len(weights)} weights")
    return float(sum(w * v for w, v in zip(weights, losses)))


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def _to_full(u, level, pyr):
    for lvl in range(level - 1, -1, -1):
        u = upsample_flow(u, pyr.dims(lvl))
    return u


def level_snapshot(cfg, fixed, moving, u_full, evaluation=None, level=None,
                   iteration=None):
    """Metrics of a full-resolution field at one point of the schedule."""
    rec = {"level": level, "iteration": iteration,
           "similarity": similarity_value(cfg, fixed, warp(moving, u_full))}
    if evaluation is None:
        return rec
    spacing = check_spacing(evaluation.spacing, fixed.ndim)
    if evaluation.has_landmarks:
        rec["tre_mean"] = tre(u_full, evaluation.fixed_landmarks,
                              evaluation.moving_landmarks, spacing)["mean"]
    if evaluation.has_labels:
        moved = warp_labels(evaluation.moving_labels, u_full)
        scores = [v for v in dice(evaluation.fixed_labels, moved).values()
                  if v is not None]
        rec["dice_mean"] = float(np.mean(scores)) if scores else None
    if min(fixed.shape) >= 3:
        jac = jacobian_det(u_full)
        rec["sd_log_j"] = sd_log_j(jac)
        rec["ndv"] = ndv(jac)
    return rec


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def _proposal_step(cfg, objective, fixed_feat, moving_feat, u, current):
    warped = warp_channels(moving_feat, u)
    corr = correlation_volume(_normalise_features(fixed_feat),
                              _normalise_features(warped), cfg.corr_radius)
    prop = corr_argmax_proposal(corr, cfg.corr_radius, cfg.proposal_sigma,
                                cfg.proposal_tie_tol)
    best, best_value, accepted = u, current, None
    for scale in cfg.proposal_scales:
        # the proposal is a target-frame offset on the warped moving image
        candidate = compose(scale * prop, u)
        value, _, _ = objective.value_and_grad(candidate, with_grad=False)
        if value < best_value:
            best, best_value, accepted = candidate, value, scale
    return best, best_value, accepted


def _gradient_steps(cfg, objective, u, n_steps, eta, trace_out):
    """Normalised descent: the largest voxel update is ``eta`` voxels.

    A step that raises the objective is undone and ``eta`` halved, so the
    recorded trace never increases.
    """
    value, _, grad = objective.value_and_grad(u)
    for _ in range(n_steps):
        if not np.isfinite(value):
            trace_out.append(value)
            raise NumericalError("non-finite loss during optimisation",
                                 trace_out)
        trace_out.append(value)
        smooth = gaussian_smooth(grad, cfg.fluid_sigma, channel_axis=True)
        gmax = float(np.sqrt(np.sum(smooth * smooth, axis=0)).max())
        if gmax == 0.0:
            continue
        candidate = u - (eta / gmax) * smooth
        new_value, _, new_grad = objective.value_and_grad(candidate)
        if not np.isfinite(new_value):
            trace_out.append(new_value)
            raise NumericalError("non-finite loss during optimisation",
                                 trace_out)
        if new_value <= value:
            u, value, grad = candidate, new_value, new_grad
        else:
            eta *= 0.5
    return u, eta


def _register_one(fixed, moving, cfg, evaluation, direction):
    fixed = check_volume(fixed, "fixed")
    moving = check_volume(moving, "moving")
    check_same_grid(fixed.shape, moving.shape, ("fixed", "moving"))
    if min(fixed.shape) < 2 ** cfg.levels:
        raise ValueError(
            f"images {fixed.shape} too small for {cfg.levels} levels")
    want_features = cfg.dual or cfg.correlation
    spec = cfg.features
    fpyr = build_pyramid(fixed, cfg.levels, spec, features=want_features)
    mpyr = build_pyramid(moving, cfg.levels, spec, features=want_features)

    d = fixed.ndim
    zero_full = np.zeros((d,) + fixed.shape)
    diagnostics = {
        "direction": direction,
        "initial": level_snapshot(cfg, fixed, moving, zero_full, evaluation),
        "rounds": [],
        "snapshots": [],
    }
    levels = cfg.active_levels
    prev_similarity = diagnostics["initial"]["similarity"]
    u = None
    level_losses = []
    for lvl in levels:
        dims = fpyr.dims(lvl)
        u = (np.zeros((d,) + dims) if u is None
             else upsample_flow(u, dims))
        f_img, m_img = fpyr.images[lvl], mpyr.images[lvl]
        if want_features:
            f_feat, m_feat = fpyr.features[lvl], mpyr.features[lvl]
        else:
            f_feat = m_feat = None
        objective = _LevelObjective(cfg, f_img, m_img, f_feat, m_feat)
        if cfg.correlation and not cfg.dual:
            f_feat, m_feat = f_img[None], m_img[None]
        eta = cfg.step_size * cfg.step_decay ** (lvl - 1)
        n_rounds = cfg.refine[lvl - 1]
        for k in range(n_rounds):
            u_start = u
            accepted = None
            if cfg.correlation:
                current, _, _ = objective.value_and_grad(u, with_grad=False)
                u, _, accepted = _proposal_step(cfg, objective, f_feat,
                                                m_feat, u, current)
            trace = []
            u, eta_end = _gradient_steps(cfg, objective, u,
                                         cfg.iterations[lvl - 1], eta, trace)
            iteration = k + 1 if n_rounds > 1 else None
            snap = level_snapshot(cfg, fixed, moving, _to_full(u, lvl, fpyr),
                                  evaluation, lvl, iteration)
            # a round that worsens the full-resolution similarity is undone
            reverted = snap["similarity"] > prev_similarity
            if reverted:
                u = u_start
                snap = level_snapshot(cfg, fixed, moving,
                                      _to_full(u, lvl, fpyr), evaluation, lvl,
                                      iteration)
            prev_similarity = snap["similarity"]
            final, final_sim, _ = objective.value_and_grad(u, with_grad=False)
            diagnostics["rounds"].append({
                "level": lvl, "round": k + 1, "trace": trace,
                "final_loss": final, "final_similarity": final_sim,
                "proposal_accepted": accepted, "step_size": eta_end,
                "reverted": bool(reverted),
            })
            diagnostics["snapshots"].append(snap)
            logger.debug("level %d round %d loss %.6g", lvl, k + 1, final)
        level_losses.append(final)

    weights = pyramid_weights(levels) if cfg.pyramid else [1.0]
    diagnostics["level_losses"] = level_losses
    diagnostics["pyramid_weights"] = weights
    diagnostics["pyramid_loss"] = pyramid_loss(level_losses, weights)
    u_full = upsample_flow(u, fixed.shape)
    diagnostics["final"] = level_snapshot(cfg, fixed, moving, u_full,
                                          evaluation)
    return RegResult(u, u_full, diagnostics, direction)


def _swap(evaluation):
    if evaluation is None:
        return None
    return EvalInputs(evaluation.moving_landmarks, evaluation.fixed_landmarks,
                      evaluation.moving_labels, evaluation.fixed_labels,
                      evaluation.spacing)


def register(fixed, moving, cfg=None, evaluation=None, direction="fwd"):
    """Register ``moving`` onto ``fixed``.

    Parameters
    ----------
    fixed, moving : ndarray
        2D or 3D images on the same grid.
    cfg : RegConfig, optional
        Defaults to the ``DWCPI`` preset with LNCC.
    evaluation : EvalInputs, optional
        Labels/landmarks used only for per-level snapshot metrics.
    direction : {"fwd", "bwd", "both"}
        ``bwd`` swaps the roles of the images. ``both`` (or
        ``cfg.bidirectional``) runs the two directions independently and
        attaches the backward result to the forward one.

    Returns
    -------
    RegResult
    """
    cfg = cfg if cfg is not None else preset("DWCPI")
    if direction not in ("fwd", "bwd", "both"):
        raise ValueError(f"direction must be fwd, bwd or both, got {direction!r}")
    if direction == "bwd":
        return _register_one(moving, fixed, cfg, _swap(evaluation), "bwd")
    result = _register_one(fixed, moving, cfg, evaluation, "fwd")
    if direction == "both" or cfg.bidirectional:
        result.backward = _register_one(moving, fixed, cfg, _swap(evaluation),
                                        "bwd")
    return result
