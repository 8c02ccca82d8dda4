"""Error-driven path addition, cleanup, and shade/light separation.

After structural optimization the albedo layer freezes.  Refinement
rounds look at the reconstruction error map, drop small circular paths
onto the worst 4-connected error blobs, optimize only those new paths for
a fixed number of iterations, and clean up redundant geometry.  The
finished illumination layer then splits by color range: paths whose fill
stays within [0, 1] become multiplicative shade, the rest become additive
light whose colors are re-derived from the residual image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import WHITE, VectorPath, project_color
from .optimize import LayerOptimizer, Schedule, TraceRow
from .raster import RasterizerConfig, layer_backward, layer_forward, path_coverage

_CROSS = ndimage.generate_binary_structure(2, 1)

# 4-segment cubic circle: tangent handle length as a fraction of radius
KAPPA = 0.5522847498307936


def circle_control_points(center, radius: float) -> np.ndarray:
    """Control polygon of a 4-segment cubic approximation of a circle."""
    cx, cy = float(center[0]), float(center[1])
    r = float(radius)
    k = KAPPA * r
    return np.array([
        [cx + r, cy], [cx + r, cy + k], [cx + k, cy + r],
        [cx, cy + r], [cx - k, cy + r], [cx - r, cy + k],
        [cx - r, cy], [cx - r, cy - k], [cx - k, cy - r],
        [cx, cy - r], [cx + k, cy - r], [cx + r, cy - k],
    ])


@dataclass(frozen=True)
class RefineConfig:
    """Refinement knobs; paths_per_round None spreads the remaining path
    budget evenly over the remaining rounds."""

    rounds_max: int = 5
    iters_per_round: int = 100
    paths_per_round: int | None = None
    new_path_segments: int = 4
    min_component_pixels: int = 16
    cleanup_area_min: float = 8.0
    cleanup_loss_eps: float = 1e-5
    merge_color_eps: float = 0.02
    merge_iou_min: float = 0.8
    error_percentile: float = 90.0
    radius_min: float = 2.0
    stop_error_max: float = 1e-4
    shade_floor: float = 0.05

    def __post_init__(self):
        if self.rounds_max < 0:
            raise ValueError("rounds_max must be nonnegative")
        if self.iters_per_round < 1:
            raise ValueError("iters_per_round must be >= 1")


def error_map(target: np.ndarray, albedo: list[VectorPath],
              illumination: list[VectorPath], width: int, height: int,
              rcfg: RasterizerConfig) -> np.ndarray:
    """Per-pixel channel-mean squared error of the two-layer composite."""
    a_img = layer_forward(albedo, WHITE, width, height, rcfg).image
    i_img = layer_forward(illumination, WHITE, width, height, rcfg).image
    diff = target - a_img * i_img
    return np.mean(diff * diff, axis=2)


def propose_paths(err: np.ndarray, n: int, target: np.ndarray,
                  albedo_render: np.ndarray, cfg: RefineConfig,
                  layer_tag: str = "illumination") -> list[VectorPath]:
    """Circular seed paths over the worst error blobs.

    Blobs are 4-connected components of pixels above the error map's 90th
    percentile, ranked by summed error (ties broken by bounding-box
    origin).  Each selected blob yields a 4-segment circle at its
    error-weighted centroid with radius sqrt(area/pi) clamped to
    [radius_min, min(W, H)/4], colored by the mean attenuation ratio
    target/albedo over the blob.  Undersized blobs are skipped; fewer
    than n usable blobs is not an error.
    """
    if n < 1:
        raise ValueError("must request at least one path")
    height, width = err.shape
    threshold = np.percentile(err, cfg.error_percentile)
    mask = err > threshold
    if not np.any(mask):
        return []
    lab, count = ndimage.label(mask, structure=_CROSS)
    candidates = []
    for cid in range(1, count + 1):
        sel = lab == cid
        area = int(sel.sum())
        if area < cfg.min_component_pixels:
            continue
        ys, xs = np.nonzero(sel)
        summed = float(err[sel].sum())
        candidates.append((-summed, int(ys.min()), int(xs.min()), cid, area))
    candidates.sort()
    # ratio may exceed 1 for highlights; only the layer's own range applies
    ratio = target / np.maximum(albedo_render, cfg.shade_floor)
    r_max = min(width, height) / 4.0
    paths = []
    for neg_sum, _y0, _x0, cid, area in candidates[:n]:
        sel = lab == cid
        ys, xs = np.nonzero(sel)
        weights = err[sel]
        wsum = float(weights.sum())
        cx = float((xs + 0.5) @ weights / wsum)
        cy = float((ys + 0.5) @ weights / wsum)
        radius = float(np.clip(np.sqrt(area / np.pi), cfg.radius_min, r_max))
        color = project_color(ratio[sel].mean(axis=0), layer_tag)
        paths.append(VectorPath(control_points=circle_control_points((cx, cy), radius),
                                fill_color=color, opacity=1.0, layer_tag=layer_tag))
    return paths


def _composite(layer_img: np.ndarray, frozen_factor: np.ndarray | None) -> np.ndarray:
    return layer_img if frozen_factor is None else layer_img * frozen_factor


def _layer_over(paths: list[VectorPath], coverages: list[np.ndarray],
                width: int, height: int) -> np.ndarray:
    """Source-over composite over white from cached per-path coverage maps."""
    img = np.ones((height, width, 3))
    for p, cov in zip(paths, coverages):
        alpha = (cov * p.opacity)[:, :, None]
        img = alpha * project_color(p.fill_color, p.layer_tag) + (1.0 - alpha) * img
    return img


def _recon_loss(layer_img: np.ndarray, frozen_factor: np.ndarray | None,
                target: np.ndarray) -> float:
    diff = _composite(layer_img, frozen_factor) - target
    return float(np.mean(diff * diff))


def cleanup_layer(paths: list[VectorPath], frozen_factor: np.ndarray | None,
                  target: np.ndarray, cfg: RefineConfig, rcfg: RasterizerConfig,
                  mutable: set[int] | None = None
                  ) -> tuple[list[VectorPath], int, int]:
    """Prune tiny/ineffective paths and merge near-duplicates, <= 3 passes.

    ``mutable`` restricts removal and merging to the identified path
    objects (by id), which refinement uses to honor the freeze contract;
    None means every path may change.  Removal decisions re-evaluate the
    composite after each change, so each loss-rule removal perturbs the
    reconstruction loss by less than cleanup_loss_eps at the moment it
    is applied.  Returns (paths, removed_count, merged_count).
    """
    height, width = target.shape[:2]
    paths = list(paths)
    removed = 0
    merged = 0

    def can_touch(p: VectorPath) -> bool:
        return mutable is None or id(p) in mutable

    for _pass in range(3):
        changed = False
        coverages = [path_coverage(p, width, height, rcfg).coverage for p in paths]

        # removal scan: tiny soft area first, then negligible loss impact;
        # the current loss is refreshed only when the stack actually changes
        current = _recon_loss(_layer_over(paths, coverages, width, height),
                              frozen_factor, target)
        i = 0
        while i < len(paths):
            p = paths[i]
            if not can_touch(p):
                i += 1
                continue
            soft_area = float(coverages[i].sum())
            if soft_area < cfg.cleanup_area_min:
                del paths[i], coverages[i]
                current = _recon_loss(_layer_over(paths, coverages, width, height),
                                      frozen_factor, target)
                removed += 1
                changed = True
                continue
            keep_paths = paths[:i] + paths[i + 1:]
            keep_covs = coverages[:i] + coverages[i + 1:]
            without = _recon_loss(_layer_over(keep_paths, keep_covs, width, height),
                                  frozen_factor, target)
            if abs(without - current) < cfg.cleanup_loss_eps:
                del paths[i], coverages[i]
                current = without
                removed += 1
                changed = True
                continue
            i += 1

        # merge scan: near-identical color and strongly overlapping support
        restart = True
        while restart:
            restart = False
            for i in range(len(paths)):
                for j in range(i + 1, len(paths)):
                    a, b = paths[i], paths[j]
                    if not (can_touch(a) and can_touch(b)):
                        continue
                    if np.max(np.abs(a.fill_color - b.fill_color)) >= cfg.merge_color_eps:
                        continue
                    sup_a = coverages[i] > 0.5
                    sup_b = coverages[j] > 0.5
                    union = np.sum(sup_a | sup_b)
                    if union == 0:
                        continue
                    iou = np.sum(sup_a & sup_b) / union
                    if iou <= cfg.merge_iou_min:
                        continue
                    area_a = float(coverages[i].sum())
                    area_b = float(coverages[j].sum())
                    keep_i, drop_j = (i, j) if area_a >= area_b else (j, i)
                    total = area_a + area_b
                    blended = (area_a * a.fill_color + area_b * b.fill_color) / total
                    paths[keep_i].fill_color = blended
                    del paths[drop_j], coverages[drop_j]
                    merged += 1
                    changed = True
                    restart = True
                    break
                if restart:
                    break

        if not changed:
            break
    return paths, removed, merged


def cleanup_paths(illumination: list[VectorPath], albedo: list[VectorPath] | None,
                  target: np.ndarray, cfg: RefineConfig, rcfg: RasterizerConfig
                  ) -> list[VectorPath]:
    """Public cleanup over a whole illumination layer (everything mutable)."""
    height, width = target.shape[:2]
    factor = None
    if albedo is not None:
        factor = layer_forward(albedo, WHITE, width, height, rcfg).image
    cleaned, _r, _m = cleanup_layer(illumination, factor, target, cfg, rcfg)
    return cleaned


def refine_layer(layer: list[VectorPath], frozen_factor: np.ndarray | None,
                 target: np.ndarray, cfg: RefineConfig, schedule: Schedule,
                 rcfg: RasterizerConfig, budget_remaining: int,
                 layer_tag: str = "illumination"
                 ) -> tuple[list[VectorPath], list[TraceRow]]:
    """Grow one layer with freshly optimized paths over frozen content.

    Existing paths in ``layer`` and the frozen factor image never change;
    new paths render above the existing stack (their background is the
    cached render of the old paths), are optimized alone, then cleaned up
    within the round.  Stops early when the error map's maximum drops
    below stop_error_max, the budget runs out, or nothing is proposed.
    """
    height, width = target.shape[:2]
    layer = list(layer)
    albedo_like = frozen_factor if frozen_factor is not None else np.ones_like(target)
    trace: list[TraceRow] = []
    for rnd in range(1, cfg.rounds_max + 1):
        base_img = layer_forward(layer, WHITE, width, height, rcfg).image
        diff = target - _composite(base_img, frozen_factor)
        err = np.mean(diff * diff, axis=2)
        if float(err.max()) < cfg.stop_error_max or budget_remaining <= 0:
            break
        if cfg.paths_per_round is not None:
            want = min(cfg.paths_per_round, budget_remaining)
        else:
            rounds_left = cfg.rounds_max - rnd + 1
            want = max(1, int(np.ceil(budget_remaining / rounds_left)))
        new_paths = propose_paths(err, want, target, albedo_like, cfg,
                                  layer_tag=layer_tag)
        if not new_paths:
            break
        opt = LayerOptimizer(new_paths, schedule)
        denom = float(width * height * 3)
        for _it in range(cfg.iters_per_round):
            render = layer_forward(new_paths, base_img, width, height, rcfg,
                                   with_grad=True)
            resid = _composite(render.image, frozen_factor) - target
            up = 2.0 * resid / denom
            if frozen_factor is not None:
                up = up * frozen_factor
            opt.step(layer_backward(new_paths, render, up, rcfg))
        layer = layer + new_paths
        mutable = {id(p) for p in new_paths}
        layer, n_removed, n_merged = cleanup_layer(layer, frozen_factor, target,
                                                   cfg, rcfg, mutable=mutable)
        budget_remaining -= sum(1 for p in layer if id(p) in mutable)
        final_img = layer_forward(layer, WHITE, width, height, rcfg).image
        final_loss = _recon_loss(final_img, frozen_factor, target)
        trace.append(TraceRow(epoch=rnd, stage="refine", loss=final_loss,
                              paths_added=len(new_paths),
                              paths_removed=n_removed + n_merged))
    return layer, trace


def refine_illumination(albedo: list[VectorPath], illumination: list[VectorPath],
                        target: np.ndarray, cfg: RefineConfig, schedule: Schedule,
                        rcfg: RasterizerConfig, budget_remaining: int
                        ) -> tuple[list[VectorPath], list[TraceRow]]:
    """Refine the illumination layer against the frozen albedo render."""
    height, width = target.shape[:2]
    factor = layer_forward(albedo, WHITE, width, height, rcfg).image
    return refine_layer(illumination, factor, target, cfg, schedule, rcfg,
                        budget_remaining, layer_tag="illumination")


def separate_layers(illumination: list[VectorPath]
                    ) -> tuple[list[VectorPath], list[VectorPath]]:
    """Partition illumination paths into shade and light by color range.

    Colors fully inside [0, 1] keep everything and become shade;
    anything brighter contributes geometry only (opacity 1, color zeroed
    until assign_light_colors runs).  Input order is preserved within
    each output and every path lands in exactly one of them.
    """
    shade: list[VectorPath] = []
    light: list[VectorPath] = []
    for p in illumination:
        if float(p.fill_color.max()) <= 1.0:
            q = p.copy()
            q.layer_tag = "shade"
            shade.append(q)
        else:
            light.append(VectorPath(control_points=p.control_points.copy(),
                                    fill_color=np.zeros(3), opacity=1.0,
                                    layer_tag="light"))
    return shade, light


def assign_light_colors(light: list[VectorPath], target: np.ndarray,
                        albedo: list[VectorPath], shade: list[VectorPath],
                        width: int, height: int,
                        rcfg: RasterizerConfig) -> list[VectorPath]:
    """Color light paths from the additive residual under their support.

    The residual is target minus the albedo*shade product.  Each light
    path takes the mean residual over its coverage > 0.5 support, clamped
    at 0; paths with empty support are dropped.
    """
    a_img = layer_forward(albedo, WHITE, width, height, rcfg).image
    s_img = layer_forward(shade, WHITE, width, height, rcfg).image
    residual = target - a_img * s_img
    out = []
    for p in light:
        cov = path_coverage(p, width, height, rcfg).coverage
        support = cov > 0.5
        if not np.any(support):
            continue
        p.fill_color = np.maximum(residual[support].mean(axis=0), 0.0)
        out.append(p)
    return out
