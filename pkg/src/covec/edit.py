"""Controlled recoloring of albedo paths against a reference image.

Given a layered document, the image it reconstructs, and an edited
reference raster, this module finds which albedo paths sit under the
changed pixels, picks the top K by support area, and rewrites only their
fill colors so the shaded composite matches the reference.  Dividing the
reference color by the mean shade under each path compensates for the
multiply blend, so a path that renders dark under shadow still receives
the intended surface color.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import LayeredDocument, RasterizerConfig, VectorPath, WHITE
from .raster import layer_forward, render_composite


@dataclass(frozen=True)
class EditConfig:
    """Thresholds for region matching and color assignment.

    tau_diff: per-pixel mean-absolute-difference level above which a
        pixel counts as edited.
    gamma_iou: minimum IoU between a path's support and the edit mask.
    delta_color: maximum L2 distance between a path's mean color in the
        two images for it to stay a candidate.  Keeping SMALL shifts is
        deliberate; see candidate_paths.
    epsilon_shade: stabilizer added to mean shade before dividing.
    top_k: number of paths to recolor; sweeps usually use 1/2/4/8/16.
    """

    tau_diff: float = 0.1
    gamma_iou: float = 0.02
    delta_color: float = 0.25
    epsilon_shade: float = 1e-4
    top_k: int = 1

    def __post_init__(self):
        for name in ("tau_diff", "gamma_iou", "delta_color", "epsilon_shade"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class EditCandidate:
    """One albedo path that overlaps the edit region."""

    path_index: int
    iou: float
    support: int
    mask: np.ndarray
    mean_original: np.ndarray
    mean_reference: np.ndarray


@dataclass
class EditReport:
    """Outcome of one edit run, serializable to JSON."""

    requested_k: int
    n_candidates: int
    selected: list[dict] = field(default_factory=list)
    mse_before: float = 0.0
    mse_after: float = 0.0

    @property
    def shortfall(self) -> int:
        return max(0, self.requested_k - self.n_candidates)

    def to_dict(self) -> dict:
        return {
            "requested_k": self.requested_k,
            "n_candidates": self.n_candidates,
            "shortfall": self.shortfall,
            "selected": self.selected,
            "mse_before": self.mse_before,
            "mse_after": self.mse_after,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all pixels and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def compute_edit_mask(original: np.ndarray, reference: np.ndarray,
                      tau: float) -> np.ndarray:
    """Boolean mask of pixels whose channel-mean absolute change exceeds tau."""
    original = np.asarray(original, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if original.shape != reference.shape:
        raise ValueError(f"image shapes differ: {original.shape} vs "
                         f"{reference.shape}")
    diff = np.mean(np.abs(original - reference), axis=2)
    return diff > tau


def _path_mask(path: VectorPath, width: int, height: int,
               rcfg: RasterizerConfig) -> np.ndarray:
    render = layer_forward([path], WHITE, width, height, rcfg)
    return render.coverages[0].coverage > 0.5


def candidate_paths(doc: LayeredDocument, original: np.ndarray,
                    reference: np.ndarray, edit_mask: np.ndarray,
                    cfg: EditConfig,
                    rcfg: RasterizerConfig | None = None
                    ) -> list[EditCandidate]:
    """Albedo paths overlapping the edit mask, largest support first.

    A path survives when its binary support (coverage above one half)
    has IoU with the edit mask above gamma_iou AND its mean color moved
    by at most delta_color between the two images.  The second filter
    keeps small shifts by construction; scenes with drastic recolors
    should raise delta_color accordingly.
    """
    rcfg = rcfg or RasterizerConfig()
    albedo = doc.albedo or []
    edit_area = int(edit_mask.sum())
    out: list[EditCandidate] = []
    for idx, path in enumerate(albedo):
        support = _path_mask(path, doc.width, doc.height, rcfg)
        n_support = int(support.sum())
        if n_support == 0:
            continue
        inter = int(np.sum(support & edit_mask))
        union = n_support + edit_area - inter
        iou = inter / union if union else 0.0
        if iou <= cfg.gamma_iou:
            continue
        mu = original[support].mean(axis=0)
        mu_ref = reference[support].mean(axis=0)
        if float(np.linalg.norm(mu - mu_ref)) > cfg.delta_color:
            continue
        out.append(EditCandidate(path_index=idx, iou=iou, support=n_support,
                                 mask=support, mean_original=mu,
                                 mean_reference=mu_ref))
    out.sort(key=lambda c: (-c.support, c.path_index))
    return out


def apply_color_edit(doc: LayeredDocument, candidates: list[EditCandidate],
                     reference: np.ndarray, cfg: EditConfig,
                     rcfg: RasterizerConfig | None = None
                     ) -> tuple[LayeredDocument, EditReport]:
    """Recolor the top-K candidate paths toward the reference.

    Only fill colors change; geometry, opacity, and stacking order stay
    put.  With a nonempty shade layer the target color divides out the
    mean rendered shade under the path, so the multiply composite lands
    on the reference color; without one the reference mean is used as is.
    Asking for more paths than exist edits them all and records the
    shortfall in the report.
    """
    rcfg = rcfg or RasterizerConfig()
    edited = doc.copy()
    report = EditReport(requested_k=cfg.top_k, n_candidates=len(candidates))
    chosen = candidates[:cfg.top_k]
    shade_img = None
    if doc.shade:
        shade_img = layer_forward(doc.shade, WHITE, doc.width, doc.height,
                                  rcfg).image
    for cand in chosen:
        path = edited.albedo[cand.path_index]
        old_color = path.fill_color.copy()
        c_ref = reference[cand.mask].mean(axis=0)
        if shade_img is not None:
            s_bar = shade_img[cand.mask].mean(axis=0)
            new_color = np.clip(c_ref / (s_bar + cfg.epsilon_shade), 0.0, 1.0)
        else:
            new_color = np.clip(c_ref, 0.0, 1.0)
        path.fill_color = new_color.astype(np.float64)
        report.selected.append({
            "path_index": cand.path_index,
            "iou": cand.iou,
            "support": cand.support,
            "mean_original": [float(v) for v in cand.mean_original],
            "mean_reference": [float(v) for v in cand.mean_reference],
            "old_color": [float(v) for v in old_color],
            "new_color": [float(v) for v in path.fill_color],
        })
    return edited, report


def run_edit(doc: LayeredDocument, original: np.ndarray,
             reference: np.ndarray, cfg: EditConfig,
             rcfg: RasterizerConfig | None = None
             ) -> tuple[LayeredDocument, EditReport]:
    """Full edit pass: mask, candidates, recolor, before/after MSE."""
    rcfg = rcfg or RasterizerConfig()
    if (original.shape[0] != doc.height or original.shape[1] != doc.width):
        raise ValueError("original image does not match document dimensions")
    edit_mask = compute_edit_mask(original, reference, cfg.tau_diff)
    cands = candidate_paths(doc, original, reference, edit_mask, cfg, rcfg)
    edited, report = apply_color_edit(doc, cands, reference, cfg, rcfg)
    before = render_composite(doc, "three_layer", rcfg)
    after = render_composite(edited, "three_layer", rcfg)
    report.mse_before = mse(np.clip(before, 0.0, 1.0), reference)
    report.mse_after = mse(np.clip(after, 0.0, 1.0), reference)
    return edited, report
