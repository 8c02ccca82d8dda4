"""Layer initialization: masks to grouped Bezier paths plus reference renders.

The pipeline seeds optimization from semantic masks.  Masks come from a
label-map file when provided, otherwise from a seeded k-means
segmentation.  Albedo paths trace mask outlines and take the mean albedo
color under the mask; illumination paths trace the dark (sub-threshold)
part of each region and take the mean image/albedo attenuation ratio.
Masks are organized into non-overlapping groups so that overlapping
shapes land in separate groups ordered back to front.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import simplify_closed
from .model import VectorPath


class InitError(ValueError):
    """Raised when no usable initialization can be built for an input."""


@dataclass(frozen=True)
class InitConfig:
    dp_epsilon: float = 2.0
    max_segments: int = 8
    kmeans_clusters: int = 8
    min_region_frac: float = 0.001
    shade_floor: float = 0.05
    blur_radius: float | None = None

    def __post_init__(self):
        if self.dp_epsilon < 0:
            raise ValueError("dp_epsilon must be nonnegative")
        if self.max_segments < 2:
            raise ValueError("max_segments must be >= 2")
        if self.kmeans_clusters < 1:
            raise ValueError("kmeans_clusters must be >= 1")
        if not 0.0 < self.shade_floor < 1.0:
            raise ValueError("shade_floor must lie in (0, 1)")


@dataclass
class SemanticMask:
    """Binary region with its pixel count and mean reference color."""

    bitmap: np.ndarray  # (H, W) bool
    area: int
    mean_color: np.ndarray  # (3,)

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray, reference: np.ndarray) -> "SemanticMask":
        bitmap = np.asarray(bitmap, dtype=bool)
        area = int(bitmap.sum())
        if area == 0:
            raise ValueError("mask bitmap is empty")
        mean_color = reference[bitmap].mean(axis=0)
        return cls(bitmap=bitmap, area=area, mean_color=mean_color)


@dataclass
class MaskGroupSet:
    """Masks partitioned into groups with no overlap inside any group."""

    groups: list[list[SemanticMask]]

    @property
    def n_masks(self) -> int:
        return sum(len(g) for g in self.groups)

    def flat(self) -> list[SemanticMask]:
        return [m for g in self.groups for m in g]


def luma(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an (H, W, 3) image."""
    return (0.299 * image[:, :, 0] + 0.587 * image[:, :, 1]
            + 0.114 * image[:, :, 2])


def fallback_albedo(image: np.ndarray, config: InitConfig) -> np.ndarray:
    """Shading-normalized albedo estimate when none is supplied.

    Divides the image by a heavily blurred luma field (floored to avoid
    blowups in dark areas) so smooth illumination cancels while surface
    color survives.  Result is clamped to [0, 1].
    """
    h, w = image.shape[:2]
    radius = config.blur_radius if config.blur_radius is not None else max(w, h) / 16.0
    field = ndimage.gaussian_filter(luma(image), sigma=radius, mode="nearest")
    denom = np.maximum(field, config.shade_floor)
    return np.clip(image / denom[:, :, None], 0.0, 1.0)


# ---------------------------------------------------------------------------
# segmentation fallback


def kmeans_labels(data: np.ndarray, k: int, seed: int, iters: int = 50) -> np.ndarray:
    """Seeded k-means over row vectors; returns a label per row.

    Plain Lloyd iterations with k-means++ seeding off a dedicated
    Generator, argmin ties to the lowest cluster index, and empty
    clusters keeping their previous centroid, so results are bit-stable
    across runs for a given seed.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[rng.integers(n)]
    d2 = np.full(n, np.inf)
    for j in range(1, k):
        diff = data - centroids[j - 1]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = data[rng.integers(n)]
        else:
            centroids[j] = data[rng.choice(n, p=d2 / total)]
    labels = np.full(n, -1, dtype=np.int64)
    for _step in range(iters):
        dist = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dist, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            sel = labels == c
            if np.any(sel):
                centroids[c] = data[sel].mean(axis=0)
    return labels


_CROSS = ndimage.generate_binary_structure(2, 1)  # 4-connectivity


def _connected_components(labels: np.ndarray) -> np.ndarray:
    """Split a label image into 4-connected components, ids from 1."""
    comp = np.zeros(labels.shape, dtype=np.int64)
    next_id = 1
    for value in np.unique(labels):
        lab, count = ndimage.label(labels == value, structure=_CROSS)
        sel = lab > 0
        comp[sel] = lab[sel] + (next_id - 1)
        next_id += count
    return comp


def _merge_small_components(comp: np.ndarray, min_area: int) -> np.ndarray:
    """Absorb tiny components into their largest 4-adjacent neighbor."""
    comp = comp.copy()
    while True:
        ids, areas = np.unique(comp, return_counts=True)
        small = [(a, i) for i, a in zip(ids, areas) if a < min_area]
        if not small or len(ids) == 1:
            return comp
        small.sort()
        merged_any = False
        for _area, cid in small:
            mask = comp == cid
            if not np.any(mask):
                continue  # already absorbed this sweep
            ring = ndimage.binary_dilation(mask, structure=_CROSS) & ~mask
            neighbors = np.unique(comp[ring])
            if neighbors.size == 0:
                continue
            n_areas = [(np.sum(comp == n), -n) for n in neighbors]
            target = -max(n_areas)[1]
            comp[mask] = target
            merged_any = True
        if not merged_any:
            return comp


def fallback_segment(image: np.ndarray, config: InitConfig, seed: int) -> list[SemanticMask]:
    """Color-cluster segmentation used when no label map is supplied.

    k-means in RGB, split clusters into 4-connected components, then merge
    components below min_region_frac of the canvas into their largest
    neighbor.  One mask per surviving component, in component-id order.
    """
    h, w = image.shape[:2]
    labels = kmeans_labels(image.reshape(-1, 3), config.kmeans_clusters, seed)
    comp = _connected_components(labels.reshape(h, w))
    min_area = max(1, int(np.ceil(config.min_region_frac * h * w)))
    comp = _merge_small_components(comp, min_area)
    masks = []
    for cid in np.unique(comp):
        masks.append(SemanticMask.from_bitmap(comp == cid, image))
    return masks


def masks_from_labels(label_map: np.ndarray, image: np.ndarray) -> list[SemanticMask]:
    """One mask per distinct label value, in ascending label order."""
    masks = []
    for value in np.unique(label_map):
        masks.append(SemanticMask.from_bitmap(label_map == value, image))
    if not masks:
        raise InitError("label map contains no labels")
    return masks


# ---------------------------------------------------------------------------
# region thresholding


@dataclass
class RegionThreshold:
    """Luma split of one region: pixels at or below the region mean."""

    threshold: float
    bitmap: np.ndarray


def region_threshold(image: np.ndarray, mask: SemanticMask) -> RegionThreshold:
    """Split one region at its mean luma; keeps the dark side (luma <= mean)."""
    lum = luma(image)
    vals = lum[mask.bitmap]
    # shift by the min before averaging so a constant region thresholds at
    # exactly its own value instead of one rounding step below it
    base = float(vals.min())
    threshold = base + float((vals - base).mean())
    return RegionThreshold(threshold=threshold,
                           bitmap=mask.bitmap & (lum <= threshold))


def region_binarize(image: np.ndarray, masks: list[SemanticMask]) -> list[SemanticMask]:
    """Dark-side submasks of each region, thresholded at the region's mean luma.

    A pixel belongs to the output mask when its luma is <= the mean luma
    of its parent region, so a perfectly uniform region yields itself.
    Empty results are dropped; every output is a subset of its parent.
    """
    out = []
    for m in masks:
        split = region_threshold(image, m)
        if np.any(split.bitmap):
            out.append(SemanticMask.from_bitmap(split.bitmap, image))
    return out


# ---------------------------------------------------------------------------
# grouping


def _overlaps(a: SemanticMask, b: SemanticMask) -> bool:
    return bool(np.any(a.bitmap & b.bitmap))


def organize_masks(masks: list[SemanticMask]) -> MaskGroupSet:
    """Partition masks into non-overlapping groups ordered back to front.

    Greedy first-fit packing: masks are taken largest-first (ties by
    input order) and dropped into the first group, scanning from the
    back, that contains nothing they overlap; a fresh front group is
    appended when every existing group conflicts.  Nested shapes
    therefore stack back to front by size.
    """
    if not masks:
        raise InitError("cannot organize an empty mask set")
    order = sorted(range(len(masks)), key=lambda i: (-masks[i].area, i))
    groups: list[list[SemanticMask]] = []
    for idx in order:
        m = masks[idx]
        for group in groups:
            if not any(_overlaps(m, other) for other in group):
                group.append(m)
                break
        else:
            groups.append([m])
    return MaskGroupSet(groups=groups)


# ---------------------------------------------------------------------------
# contour tracing

# direction vectors: right, down, left, up (y grows downward)
_DIRS = np.array([(1, 0), (0, 1), (-1, 0), (0, -1)])


def _edge_valid(filled: np.ndarray, vx: int, vy: int, d: int) -> bool:
    """Directed grid edge test: filled pixel on the right, empty on the left."""
    h, w = filled.shape

    def px(x, y):
        return bool(filled[y, x]) if 0 <= x < w and 0 <= y < h else False

    if d == 0:  # right: below filled, above empty
        return px(vx, vy) and not px(vx, vy - 1)
    if d == 1:  # down: left filled, right empty
        return px(vx - 1, vy) and not px(vx, vy)
    if d == 2:  # left: above filled, below empty
        return px(vx - 1, vy - 1) and not px(vx - 1, vy)
    # up: right filled, left empty
    return px(vx, vy - 1) and not px(vx - 1, vy - 1)


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of the largest 4-connected component of a mask.

    Walks directed grid edges keeping the region on the right, preferring
    right turns so saddle corners stay on the current component.  Returns
    corner vertices only (collinear lattice points collapsed), in pixel
    corner coordinates where pixel (x, y) spans [x, x+1] x [y, y+1].
    Interior holes are ignored.
    """
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ValueError("cannot trace an empty mask")
    lab, count = ndimage.label(mask, structure=_CROSS)
    if count > 1:
        areas = np.bincount(lab.ravel())
        areas[0] = 0
        filled = lab == int(np.argmax(areas))
    else:
        filled = mask
    ys, xs = np.nonzero(filled)
    start_i = np.lexsort((xs, ys))[0]
    sx, sy = int(xs[start_i]), int(ys[start_i])
    # topmost-leftmost pixel: its top edge runs right
    vx, vy, d = sx, sy, 0
    start_state = (vx, vy, d)
    corners = [(vx, vy)]
    while True:
        vx += int(_DIRS[d][0])
        vy += int(_DIRS[d][1])
        # right turn first, then straight, then left turn
        for turn in (1, 0, 3):
            nd = (d + turn) % 4
            if _edge_valid(filled, vx, vy, nd):
                break
        else:
            raise RuntimeError("boundary walk reached a dead end")
        if (vx, vy, nd) == start_state:
            break
        if nd != d:
            corners.append((vx, vy))
        d = nd
        if len(corners) > 4 * filled.size + 4:
            raise RuntimeError("boundary walk failed to terminate")
    return np.asarray(corners, dtype=np.float64)


def trace_and_simplify(mask: np.ndarray, dp_epsilon: float) -> np.ndarray:
    """Traced outer boundary simplified with closed-loop Douglas-Peucker.

    The simplified loop stays within Hausdorff distance dp_epsilon of the
    raw trace and keeps at least 3 vertices.
    """
    return simplify_closed(trace_boundary(mask), dp_epsilon)


# ---------------------------------------------------------------------------
# Bezier fitting


def fit_bezier_contour(points: np.ndarray, max_segments: int) -> np.ndarray:
    """Closed cubic control polygon approximating a closed polyline.

    Segment endpoints are polyline vertices sampled at roughly equal arc
    length (capped at one segment per vertex); interior control points
    sit at 1/3 and 2/3 of each chord, so every segment starts straight
    and a polygon with few vertices reproduces exactly.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < 3:
        raise ValueError("contour needs at least 3 vertices")
    if max_segments < 2:
        raise ValueError("max_segments must be >= 2")
    k = min(max_segments, n)
    edges = np.roll(pts, -1, axis=0) - pts
    seg_len = np.hypot(edges[:, 0], edges[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])  # cum[j] = length to vertex j
    total = cum[-1]
    if total <= 0:
        raise ValueError("contour has zero length")
    endpoints = [0]
    for i in range(1, k):
        target = total * i / k
        nearest = int(np.argmin(np.abs(cum[:n] - target)))
        lo = endpoints[-1] + 1
        hi = n - (k - i)
        endpoints.append(int(np.clip(nearest, lo, hi)))
    ctrl = np.empty((3 * k, 2))
    for i in range(k):
        a = pts[endpoints[i]]
        b = pts[endpoints[(i + 1) % k]]
        ctrl[3 * i] = a
        ctrl[3 * i + 1] = a + (b - a) / 3.0
        ctrl[3 * i + 2] = a + 2.0 * (b - a) / 3.0
    return ctrl


# ---------------------------------------------------------------------------
# layer assembly


def attenuation_ratio(image: np.ndarray, albedo_map: np.ndarray,
                      config: InitConfig) -> np.ndarray:
    """Per-pixel multiplicative shading estimate image / albedo, in [0, 1]."""
    denom = np.maximum(albedo_map, config.shade_floor)
    return np.clip(image / denom, 0.0, 1.0)


def paths_for_groups(group_set: MaskGroupSet, color_image: np.ndarray,
                     layer_tag: str, config: InitConfig,
                     width: int, height: int) -> tuple[list[list[VectorPath]], list[np.ndarray]]:
    """Build one VectorPath per mask plus a flat-color reference render per group.

    Each path traces its mask outline; its fill is the mean of
    ``color_image`` under the mask.  The reference render paints each
    group's masks (non-overlapping by construction) onto white.
    """
    groups: list[list[VectorPath]] = []
    renders: list[np.ndarray] = []
    for group in group_set.groups:
        paths = []
        render = np.ones((height, width, 3))
        for mask in group:
            color = np.clip(color_image[mask.bitmap].mean(axis=0), 0.0, 1.0)
            loop = trace_and_simplify(mask.bitmap, config.dp_epsilon)
            ctrl = fit_bezier_contour(loop, config.max_segments)
            paths.append(VectorPath(control_points=ctrl, fill_color=color,
                                    opacity=1.0, layer_tag=layer_tag))
            render[mask.bitmap] = color
        groups.append(paths)
        renders.append(render)
    return groups, renders


@dataclass
class InitResult:
    albedo_groups: list[list[VectorPath]]
    illum_groups: list[list[VectorPath]]
    albedo_renders: list[np.ndarray]
    illum_renders: list[np.ndarray]
    albedo_mask_groups: MaskGroupSet
    illum_mask_groups: MaskGroupSet


def init_layers(image: np.ndarray, albedo_map: np.ndarray,
                seg_masks: list[SemanticMask], config: InitConfig) -> InitResult:
    """Grouped albedo and illumination paths plus per-group reference renders.

    Albedo groups come from the segmentation masks colored by the albedo
    map.  Illumination groups come from each region's dark submask
    colored by the image/albedo attenuation ratio.
    """
    if not seg_masks:
        raise InitError("no albedo masks found")
    h, w = image.shape[:2]
    albedo_groups_m = organize_masks(seg_masks)
    a_groups, a_renders = paths_for_groups(albedo_groups_m, albedo_map,
                                           "albedo", config, w, h)
    shadow_masks = region_binarize(image, seg_masks)
    illum_groups_m = organize_masks(shadow_masks)
    ratio = attenuation_ratio(image, albedo_map, config)
    i_groups, i_renders = paths_for_groups(illum_groups_m, ratio,
                                           "illumination", config, w, h)
    return InitResult(albedo_groups=a_groups, illum_groups=i_groups,
                      albedo_renders=a_renders, illum_renders=i_renders,
                      albedo_mask_groups=albedo_groups_m,
                      illum_mask_groups=illum_groups_m)
