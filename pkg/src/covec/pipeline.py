"""End-to-end vectorization runs: load, initialize, optimize, refine, emit.

Two modes.  Full mode reconstructs the image as albedo times shade plus
light: initialization from a segmentation and an albedo estimate,
structural warm-up, joint reconstruction, error-driven refinement of the
illumination layer over the frozen albedo, then separation into shade
and light.  Albedo-only mode folds the region shadow masks into a single
albedo layer and refines that layer directly; its output document has
empty shade and light groups.

File inputs are always preferred when named: an albedo estimate image
and a label-map segmentation replace the internal fallbacks (smoothness
ratio and seeded k-means).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_io import read_image, read_label_map
from .init_layers import (InitConfig, fallback_albedo, fallback_segment,
                          init_layers, masks_from_labels, organize_masks,
                          paths_for_groups, region_binarize)
from .model import LayeredDocument, RasterizerConfig
from .optimize import Schedule, StructLossConfig, TraceRow, run_structural
from .raster import render_composite
from .refine import (RefineConfig, assign_light_colors, refine_illumination,
                     refine_layer, separate_layers)
from .svg_io import emit_svg

MODES = ("full", "albedo_only")
DEFAULT_BUDGET = {"full": 64, "albedo_only": 16}


@dataclass
class RunConfig:
    """Everything one vectorization run needs, mirroring the CLI flags."""

    input_path: str
    output_path: str
    mode: str = "full"
    path_budget: int | None = None
    seed: int = 0
    albedo_path: str | None = None
    masks_path: str | None = None
    trace_path: str | None = None
    dp_epsilon: float = 2.0
    aa_sigma: float = 1.0
    warmup_epochs: int = 50
    joint_epochs: int = 50
    refine_rounds: int = 5
    refine_iters: int = 100
    lambda_overlap: float = 1e-8
    delta_overlap: float = 0.6
    penalty_sign: str = "overlap"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.path_budget is not None and self.path_budget < 1:
            raise ValueError("path budget must be >= 1")

    @property
    def effective_budget(self) -> int:
        if self.path_budget is not None:
            return self.path_budget
        return DEFAULT_BUDGET[self.mode]

    @property
    def effective_trace_path(self) -> str:
        if self.trace_path is not None:
            return self.trace_path
        return str(Path(self.output_path).with_suffix(".csv"))

    def raster_config(self) -> RasterizerConfig:
        return RasterizerConfig(aa_sigma=self.aa_sigma)

    def init_config(self) -> InitConfig:
        return InitConfig(dp_epsilon=self.dp_epsilon)

    def schedule(self) -> Schedule:
        return Schedule(warmup_epochs=self.warmup_epochs,
                        joint_epochs=self.joint_epochs)

    def struct_config(self) -> StructLossConfig:
        return StructLossConfig(lambda_overlap=self.lambda_overlap,
                                delta_overlap=self.delta_overlap,
                                penalty_sign=self.penalty_sign)

    def refine_config(self) -> RefineConfig:
        return RefineConfig(rounds_max=self.refine_rounds,
                            iters_per_round=self.refine_iters)


@dataclass
class VectorizeResult:
    document: LayeredDocument
    trace: list[TraceRow] = field(default_factory=list)
    final_mse: float = 0.0


def _load_image(cfg: RunConfig) -> np.ndarray:
    return read_image(cfg.input_path)


def _load_albedo(cfg: RunConfig, image: np.ndarray,
                 icfg: InitConfig) -> np.ndarray:
    if cfg.albedo_path is None:
        return fallback_albedo(image, icfg)
    albedo = read_image(cfg.albedo_path)
    if albedo.shape != image.shape:
        raise ValueError(f"albedo map shape {albedo.shape} does not match "
                         f"input image {image.shape}")
    return albedo


def _load_masks(cfg: RunConfig, image: np.ndarray, icfg: InitConfig):
    if cfg.masks_path is None:
        return fallback_segment(image, icfg, cfg.seed)
    labels = read_label_map(cfg.masks_path)
    if labels.shape != image.shape[:2]:
        raise ValueError(f"label map shape {labels.shape} does not match "
                         f"input image {image.shape[:2]}")
    return masks_from_labels(labels, image)


def _vectorize_full(cfg: RunConfig, image: np.ndarray) -> VectorizeResult:
    icfg = cfg.init_config()
    rcfg = cfg.raster_config()
    h, w = image.shape[:2]
    albedo_map = _load_albedo(cfg, image, icfg)
    seg_masks = _load_masks(cfg, image, icfg)
    init = init_layers(image, albedo_map, seg_masks, icfg)
    trace = run_structural(init.albedo_groups, init.illum_groups, image,
                           init.albedo_renders, init.illum_renders,
                           cfg.schedule(), cfg.struct_config(), rcfg)
    albedo = [p for g in init.albedo_groups for p in g]
    illum = [p for g in init.illum_groups for p in g]
    budget_left = max(0, cfg.effective_budget - len(albedo) - len(illum))
    illum, refine_trace = refine_illumination(albedo, illum, image,
                                              cfg.refine_config(),
                                              cfg.schedule(), rcfg,
                                              budget_left)
    trace.extend(refine_trace)
    shade, light = separate_layers(illum)
    light = assign_light_colors(light, image, albedo, shade, w, h, rcfg)
    doc = LayeredDocument(width=w, height=h, albedo=albedo, illumination=[],
                          shade=shade, light=light)
    rendered = np.clip(render_composite(doc, "three_layer", rcfg), 0.0, 1.0)
    mse = float(np.mean((rendered - image) ** 2))
    return VectorizeResult(document=doc, trace=trace, final_mse=mse)


def _vectorize_albedo_only(cfg: RunConfig, image: np.ndarray) -> VectorizeResult:
    icfg = cfg.init_config()
    rcfg = cfg.raster_config()
    h, w = image.shape[:2]
    seg_masks = _load_masks(cfg, image, icfg)
    shadow_masks = region_binarize(image, seg_masks)
    groups_m = organize_masks(seg_masks + shadow_masks)
    a_groups, a_renders = paths_for_groups(groups_m, image, "albedo",
                                           icfg, w, h)
    trace = run_structural(a_groups, None, image, a_renders, None,
                           cfg.schedule(), cfg.struct_config(), rcfg)
    albedo = [p for g in a_groups for p in g]
    budget_left = max(0, cfg.effective_budget - len(albedo))
    albedo, refine_trace = refine_layer(albedo, None, image,
                                        cfg.refine_config(), cfg.schedule(),
                                        rcfg, budget_left, layer_tag="albedo")
    trace.extend(refine_trace)
    doc = LayeredDocument(width=w, height=h, albedo=albedo, illumination=[],
                          shade=[], light=[])
    rendered = np.clip(render_composite(doc, "three_layer", rcfg), 0.0, 1.0)
    mse = float(np.mean((rendered - image) ** 2))
    return VectorizeResult(document=doc, trace=trace, final_mse=mse)


def vectorize(cfg: RunConfig) -> VectorizeResult:
    """Run the configured pipeline; no files are written."""
    image = _load_image(cfg)
    if cfg.mode == "full":
        return _vectorize_full(cfg, image)
    return _vectorize_albedo_only(cfg, image)


def trace_csv_bytes(trace: list[TraceRow]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "stage", "loss", "paths_added", "paths_removed"])
    for row in trace:
        writer.writerow([
            row.epoch, row.stage, repr(float(row.loss)),
            "" if row.paths_added is None else row.paths_added,
            "" if row.paths_removed is None else row.paths_removed,
        ])
    return buf.getvalue().encode("utf-8")


def write_outputs(result: VectorizeResult, cfg: RunConfig) -> None:
    """Write the SVG document and the optimization trace CSV."""
    emit_svg(result.document, out=cfg.output_path)
    with open(cfg.effective_trace_path, "wb") as fh:
        fh.write(trace_csv_bytes(result.trace))


def run(cfg: RunConfig) -> VectorizeResult:
    """vectorize + write_outputs in one call."""
    result = vectorize(cfg)
    write_outputs(result, cfg)
    return result
