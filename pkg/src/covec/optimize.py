"""Two-stage path optimization: structural warm-up, then joint reconstruction.

Each layer owns an independent Adam optimizer over its paths' control
points, fill colors, and opacities.  During warm-up every layer minimizes
its own structure loss (per-group MSE against flat mask renders plus a
soft overlap penalty); afterwards both layers step jointly on the
reconstruction loss of the multiplied composite.  Opacities are optimized
through a logistic reparameterization so they stay strictly inside
[0, 1]; colors are projected to their layer's valid range after every
step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .model import WHITE, GradientBuffer, VectorPath, project_color
from .raster import RasterizerConfig, coverage_backward, layer_backward, layer_forward

logger = logging.getLogger(__name__)

PENALTY_MODES = ("paper_literal", "overlap")


@dataclass(frozen=True)
class StructLossConfig:
    """Structure-loss knobs.

    ``penalty_sign`` picks the direction of the hinge on the
    semi-transparent gray alpha field: ``overlap`` penalizes alpha above
    delta_overlap (alpha rises where paths stack, so this discourages
    self-overlap); ``paper_literal`` penalizes alpha below it.
    """

    lambda_overlap: float = 1e-8
    delta_overlap: float = 0.6
    gray_alpha: float = 0.5
    penalty_sign: str = "overlap"

    def __post_init__(self):
        if self.lambda_overlap < 0:
            raise ValueError("lambda_overlap must be nonnegative")
        if not 0.0 < self.delta_overlap < 1.0:
            raise ValueError("delta_overlap must lie in (0, 1)")
        if not 0.0 < self.gray_alpha < 1.0:
            raise ValueError("gray_alpha must lie in (0, 1)")
        if self.penalty_sign not in PENALTY_MODES:
            raise ValueError(f"penalty_sign must be one of {PENALTY_MODES}")


@dataclass(frozen=True)
class Schedule:
    warmup_epochs: int = 50
    joint_epochs: int = 50
    lr_points: float = 1.0
    lr_colors: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.joint_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.lr_points <= 0 or self.lr_colors <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step=0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float, schedule: Schedule) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter value.

    The step counter advances even when a non-finite gradient forces a
    skip, so later bias corrections stay aligned across parameter groups.
    """
    state.step += 1
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        logger.warning("skipping Adam step %d: non-finite gradient", state.step)
        return np.asarray(param, dtype=np.float64)
    b1, b2 = schedule.beta1, schedule.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + schedule.adam_eps)


_OPACITY_CLIP = 1e-3  # keeps the logit finite for opacities at 0 or 1


class LayerOptimizer:
    """Independent Adam states for every path in one layer.

    Control points update at lr_points; colors and the opacity logit at
    lr_colors.  After each step colors are projected into the layer's
    valid range and opacity is recovered from its logit, so every path
    invariant survives unconstrained gradient steps.
    """

    def __init__(self, paths: list[VectorPath], schedule: Schedule):
        self.paths = paths
        self.schedule = schedule
        self.point_states = [AdamState.zeros(p.control_points.shape) for p in paths]
        self.color_states = [AdamState.zeros(3) for p in paths]
        self.opacity_states = [AdamState.zeros(()) for p in paths]
        self.opacity_logits = [
            float(logit(np.clip(p.opacity, _OPACITY_CLIP, 1.0 - _OPACITY_CLIP)))
            for p in paths
        ]

    def step(self, grads: list[GradientBuffer]) -> None:
        if len(grads) != len(self.paths):
            raise ValueError("gradient count does not match path count")
        sched = self.schedule
        for i, (path, g) in enumerate(zip(self.paths, grads)):
            path.control_points = adam_step(path.control_points, g.d_control_points,
                                            self.point_states[i], sched.lr_points,
                                            sched)
            color = adam_step(path.fill_color, g.d_fill_color,
                              self.color_states[i], sched.lr_colors, sched)
            path.fill_color = project_color(color, path.layer_tag)
            s = expit(self.opacity_logits[i])
            d_logit = g.d_opacity * s * (1.0 - s)
            new_logit = adam_step(np.float64(self.opacity_logits[i]), d_logit,
                                  self.opacity_states[i], sched.lr_colors, sched)
            self.opacity_logits[i] = float(new_logit)
            path.opacity = float(expit(new_logit))


def gray_alpha_field(coverages: list[np.ndarray], gray_alpha: float) -> np.ndarray:
    """Source-over alpha of every path re-filled at a common opacity.

    alpha(p) = 1 - prod_i (1 - gray_alpha * coverage_i(p)); with
    gray_alpha 0.5 a singly covered pixel sits at 0.5 and any overlap
    pushes it higher, which is what the overlap penalty thresholds.
    """
    prod = np.ones_like(coverages[0])
    for cov in coverages:
        prod *= 1.0 - gray_alpha * cov
    return 1.0 - prod


def loss_struct(groups: list[list[VectorPath]], mask_renders: list[np.ndarray],
                cfg: StructLossConfig, width: int, height: int,
                rcfg: RasterizerConfig) -> tuple[float, list[GradientBuffer]]:
    """Per-group MSE to the mask renders plus the overlap hinge penalty.

    Every group renders over white and is compared to its flat mask
    render (mean over pixels and channels).  The penalty term evaluates
    the gray alpha field of the same geometry and adds
    lambda_overlap * sum_p hinge(alpha(p)).  Gradients from both terms
    accumulate into one buffer per path, ordered by group then path.
    """
    if len(groups) != len(mask_renders):
        raise ValueError("group count does not match mask render count")
    total = 0.0
    all_grads: list[GradientBuffer] = []
    denom = float(width * height * 3)
    for group, reference in zip(groups, mask_renders):
        render = layer_forward(group, WHITE, width, height, rcfg, with_grad=True)
        diff = render.image - reference
        total += float(np.mean(diff * diff))
        d_img = 2.0 * diff / denom
        grads = layer_backward(group, render, d_img, rcfg)
        if cfg.lambda_overlap > 0.0 and group:
            covs = [pc.coverage for pc in render.coverages]
            ga = cfg.gray_alpha
            one_minus = [1.0 - ga * c for c in covs]
            prod = np.ones((height, width))
            for om in one_minus:
                prod *= om
            alpha = 1.0 - prod
            if cfg.penalty_sign == "overlap":
                excess = alpha - cfg.delta_overlap
                d_alpha = cfg.lambda_overlap * (excess > 0.0)
            else:
                excess = cfg.delta_overlap - alpha
                d_alpha = -cfg.lambda_overlap * (excess > 0.0)
            total += cfg.lambda_overlap * float(np.maximum(excess, 0.0).sum())
            for i, pc in enumerate(render.coverages):
                d_cov = d_alpha * ga * prod / one_minus[i]
                grads[i].d_control_points += coverage_backward(pc, d_cov, rcfg)
        all_grads.extend(grads)
    return total, all_grads


def loss_recon(albedo: list[VectorPath], illumination: list[VectorPath] | None,
               target: np.ndarray, width: int, height: int,
               rcfg: RasterizerConfig
               ) -> tuple[float, list[GradientBuffer], list[GradientBuffer] | None]:
    """Mean squared error of the composite against the target image.

    With an illumination layer the composite is the product of both layer
    renders (each over white); without one (single-layer mode) the albedo
    render is compared directly.  Gradients flow to both layers through
    the multiply blend.
    """
    if target.shape != (height, width, 3):
        raise ValueError("target dims do not match the canvas")
    a_render = layer_forward(albedo, WHITE, width, height, rcfg, with_grad=True)
    denom = float(width * height * 3)
    if illumination is None:
        diff = a_render.image - target
        loss = float(np.mean(diff * diff))
        up = 2.0 * diff / denom
        return loss, layer_backward(albedo, a_render, up, rcfg), None
    i_render = layer_forward(illumination, WHITE, width, height, rcfg, with_grad=True)
    composite = a_render.image * i_render.image
    diff = composite - target
    loss = float(np.mean(diff * diff))
    up = 2.0 * diff / denom
    grads_a = layer_backward(albedo, a_render, up * i_render.image, rcfg)
    grads_i = layer_backward(illumination, i_render, up * a_render.image, rcfg)
    return loss, grads_a, grads_i


@dataclass
class TraceRow:
    """One optimization trace entry; stage is 'warmup', 'joint' or 'refine'."""

    epoch: int
    stage: str
    loss: float
    paths_added: int | None = None
    paths_removed: int | None = None


def run_structural(albedo_groups: list[list[VectorPath]],
                   illum_groups: list[list[VectorPath]] | None,
                   target: np.ndarray,
                   mask_renders_a: list[np.ndarray],
                   mask_renders_i: list[np.ndarray] | None,
                   schedule: Schedule,
                   struct_cfg: StructLossConfig,
                   rcfg: RasterizerConfig) -> list[TraceRow]:
    """Warm-up on per-layer structure losses, then joint reconstruction.

    Paths are updated in place.  Each layer keeps its own optimizer from
    start to finish; warm-up steps them on their own structure losses
    (the trace row holds the summed loss), joint epochs step both on the
    shared reconstruction loss.  With illum_groups None only the albedo
    layer trains and reconstruction compares its render directly.
    """
    height, width = target.shape[:2]
    albedo_flat = [p for g in albedo_groups for p in g]
    illum_flat = None if illum_groups is None else [p for g in illum_groups for p in g]
    opt_a = LayerOptimizer(albedo_flat, schedule)
    opt_i = None if illum_flat is None else LayerOptimizer(illum_flat, schedule)
    trace: list[TraceRow] = []
    for epoch in range(1, schedule.warmup_epochs + 1):
        loss_a, grads_a = loss_struct(albedo_groups, mask_renders_a, struct_cfg,
                                      width, height, rcfg)
        opt_a.step(grads_a)
        loss_total = loss_a
        if opt_i is not None:
            loss_i, grads_i = loss_struct(illum_groups, mask_renders_i, struct_cfg,
                                          width, height, rcfg)
            opt_i.step(grads_i)
            loss_total += loss_i
        trace.append(TraceRow(epoch=epoch, stage="warmup", loss=loss_total))
    for epoch in range(1, schedule.joint_epochs + 1):
        loss, grads_a, grads_i = loss_recon(albedo_flat, illum_flat, target,
                                            width, height, rcfg)
        opt_a.step(grads_a)
        if opt_i is not None:
            opt_i.step(grads_i)
        trace.append(TraceRow(epoch=schedule.warmup_epochs + epoch,
                              stage="joint", loss=loss))
    return trace
