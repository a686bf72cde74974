"""Deterministic conversion of an entropy map plus point annotations into instances.

Stages, in order:

a. blur the (normalized) entropy map
b. zero it along the Voronoi edges of the points, binarize with a local
   Gaussian threshold, clean up with an opening and an area filter, and
   box each connected component as a region of interest
c. split every region with a marker-controlled watershed
d. score every mask against the points
e. keep the masks closest to a point, at most one mask per point
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .raster import (BBox, component_bboxes, connected_components, distance_transform,
                     gaussian_blur, opening)


@dataclass(frozen=True)
class InstancerConfig:
    blur_sigma: float = 1.5
    threshold_window: int = 31
    threshold_offset: float = 0.02
    min_area: int = 10
    open_radius: int = 1
    marker_dt_fraction: float = 0.5
    match_max_dist: float = 20.0
    roi_margin: int = 2

    def validate(self) -> None:
        if self.threshold_window < 3 or self.threshold_window % 2 == 0:
            raise ValueError("threshold_window must be odd and >= 3")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")
        if not 0 < self.marker_dt_fraction < 1:
            raise ValueError("marker_dt_fraction must lie in (0, 1)")
        if self.blur_sigma <= 0 or self.open_radius < 0 or self.match_max_dist < 0:
            raise ValueError("blur_sigma must be > 0, open_radius and match_max_dist >= 0")


@dataclass
class Instance:
    id: int
    bbox: BBox
    mask: np.ndarray  # cropped to bbox
    matched_point: Optional[int] = None

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def full_mask(self, shape: Tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.bbox.slices] = self.mask
        return out

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Global ``(ys, xs)`` of the mask pixels."""
        ys, xs = np.nonzero(self.mask)
        return ys + self.bbox.y0, xs + self.bbox.x0


@dataclass
class InstanceSet:
    instances: List[Instance]
    shape: Tuple[int, int]

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def to_label_map(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int32)
        for inst in self.instances:
            out[inst.bbox.slices][inst.mask] = inst.id
        return out


def instance_from_mask(inst_id: int, mask: np.ndarray) -> Instance:
    ys, xs = np.nonzero(mask)
    bbox = BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    return Instance(inst_id, bbox, mask[bbox.slices].copy())


def instances_from_labels(labels: np.ndarray) -> InstanceSet:
    labels = np.asarray(labels)
    out = [Instance(i, b, labels[b.slices] == i) for i, b in component_bboxes(labels)]
    return InstanceSet(out, labels.shape)


# -- Voronoi partition -------------------------------------------------------

def voronoi_regions(points: Sequence, shape: Tuple[int, int]) -> np.ndarray:
    """Index of the nearest point for every pixel; ties go to the lower index."""
    if len(points) == 0:
        raise ValueError("no seeds: at least one point is required")
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    best = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    region = np.zeros((h, w), dtype=np.int32)
    for k, p in enumerate(points):
        d2 = (xx - int(p.x)) ** 2 + (yy - int(p.y)) ** 2
        closer = d2 < best
        best[closer] = d2[closer]
        region[closer] = k
    return region


def voronoi_edges(regions: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour in a different region."""
    regions = np.asarray(regions)
    edges = np.zeros(regions.shape, dtype=bool)
    dv = regions[1:, :] != regions[:-1, :]
    dh = regions[:, 1:] != regions[:, :-1]
    edges[1:, :] |= dv
    edges[:-1, :] |= dv
    edges[:, 1:] |= dh
    edges[:, :-1] |= dh
    return edges


def suppress_edges(entropy: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Zero the map on edge pixels so they act as a barrier."""
    entropy = np.asarray(entropy, dtype=np.float64)
    if entropy.shape != np.shape(edges):
        raise ValueError("entropy and edge mask differ in shape")
    return np.where(edges, 0.0, entropy)


# -- binarization and regions ------------------------------------------------

def adaptive_threshold(grid: np.ndarray, window: int, offset: float) -> np.ndarray:
    """Foreground where a pixel exceeds its Gaussian-weighted neighbourhood by ``offset``.

    The neighbourhood weight is a Gaussian with sigma ``window / 6``
    truncated to the ``window x window`` square, reflect padded.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    grid = np.asarray(grid, dtype=np.float64)
    local = gaussian_blur(grid, window / 6.0, radius=window // 2)
    return grid - local > offset


def remove_small(mask: np.ndarray, min_area: int) -> np.ndarray:
    labels = connected_components(mask, 8)
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def extract_rois(mask: np.ndarray, margin: int = 2) -> List[BBox]:
    """Bounding box of each 8-connected component, grown by ``margin``."""
    labels = connected_components(mask, 8)
    return [b.expand(margin, labels.shape) for _, b in component_bboxes(labels)]


# -- watershed ---------------------------------------------------------------

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def watershed_roi(image_smoothed: np.ndarray, mask: np.ndarray, roi: BBox,
                  config: InstancerConfig = InstancerConfig()) -> np.ndarray:
    """Marker-controlled watershed of ``mask`` inside ``roi``.

    Markers are the connected plateaus where the distance transform reaches
    ``marker_dt_fraction`` of its maximum. Flooding visits pixels by
    decreasing distance to the background, breaking ties by ascending
    smoothed image value, then by visiting order.

    Returns
    -------
    ndarray of int32
        Labels with the shape of ``roi``; 0 outside the mask.
    """
    sub = np.asarray(mask, dtype=bool)[roi.slices]
    if not sub.any():
        raise ValueError("mask is empty inside the region of interest")
    values = np.asarray(image_smoothed, dtype=np.float64)[roi.slices]
    dist = distance_transform(sub)
    markers = connected_components(dist >= config.marker_dt_fraction * dist.max(), 8)
    markers[~sub] = 0
    if markers.max() == 0:
        return sub.astype(np.int32)

    h, w = sub.shape
    labels = markers.copy()
    heap = []
    counter = 0
    for y, x in zip(*np.nonzero(labels)):
        heap.append((-dist[y, x], values[y, x], counter, int(y), int(x)))
        counter += 1
    heapq.heapify(heap)
    while heap:
        _, _, _, y, x = heapq.heappop(heap)
        lab = labels[y, x]
        for dy, dx in _NEIGHBOURS:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and sub[ny, nx] and labels[ny, nx] == 0:
                labels[ny, nx] = lab
                heapq.heappush(heap, (-dist[ny, nx], values[ny, nx], counter, ny, nx))
                counter += 1
    return labels


# -- point matching ----------------------------------------------------------

def _point_costs(inst: Instance, points: Sequence, max_dist: float) -> Dict[int, float]:
    ys, xs = inst.coords()
    b = inst.bbox
    costs = {}
    for k, p in enumerate(points):
        gx = max(b.x0 - p.x, 0, p.x - (b.x1 - 1))
        gy = max(b.y0 - p.y, 0, p.y - (b.y1 - 1))
        if gx * gx + gy * gy > max_dist * max_dist:
            continue
        d2 = int(np.min((xs - p.x) ** 2 + (ys - p.y) ** 2))
        cost = float(np.sqrt(d2))
        if cost <= max_dist:
            costs[k] = cost
    return costs


def match_to_points(instances: InstanceSet, points: Sequence, max_dist: float) -> InstanceSet:
    """Keep at most one instance per point, closest pairs first.

    The cost of a pair is 0 when the point lies inside the mask, otherwise
    the Euclidean distance from the point to the nearest mask pixel. Pairs
    are taken in ascending ``(cost, point index, instance position)`` order;
    pairs costing more than ``max_dist`` are never taken.
    """
    pairs = []
    for pos, inst in enumerate(instances.instances):
        for k, cost in _point_costs(inst, points, max_dist).items():
            pairs.append((cost, k, pos))
    pairs.sort()
    used_points, owner = set(), {}
    for cost, k, pos in pairs:
        if k in used_points or pos in owner:
            continue
        used_points.add(k)
        owner[pos] = k
    kept = []
    for pos, inst in enumerate(instances.instances):
        if pos in owner:
            kept.append(Instance(inst.id, inst.bbox, inst.mask, owner[pos]))
    return InstanceSet(kept, instances.shape)


# -- full pipeline -----------------------------------------------------------

@dataclass
class StageDump:
    """Intermediate rasters of one run, named after the pipeline stages."""

    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    rois: List[BBox] = field(default_factory=list)


def run_instancing(entropy: np.ndarray, points: Sequence, image: np.ndarray,
                   config: InstancerConfig = InstancerConfig(),
                   stages: Optional[StageDump] = None) -> InstanceSet:
    """Entropy map (normalized to [0, 1]) and points to matched instances."""
    config.validate()
    entropy = np.asarray(entropy, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if entropy.shape != image.shape:
        raise ValueError("entropy and image differ in shape")
    shape = entropy.shape

    blurred = gaussian_blur(entropy, config.blur_sigma)
    # canonical point order keeps tie pixels, and so the barrier, independent of input order
    canonical = sorted(points, key=lambda p: (int(p.y), int(p.x)))
    edges = voronoi_edges(voronoi_regions(canonical, shape))
    separated = suppress_edges(blurred, edges)
    fg = adaptive_threshold(separated, config.threshold_window, config.threshold_offset)
    # regions are bounded by exterior contours, so interior holes belong to them
    fg = ndimage.binary_fill_holes(fg) & ~edges
    if config.open_radius > 0:
        fg = opening(fg, config.open_radius)
    fg = remove_small(fg, config.min_area)

    components = connected_components(fg, 8)
    smoothed = gaussian_blur(image, config.blur_sigma)
    found: List[Instance] = []
    rois = []
    for comp_id, box in component_bboxes(components):
        roi = box.expand(config.roi_margin, shape)
        rois.append(roi)
        local = watershed_roi(smoothed, components == comp_id, roi, config)
        for lab in range(1, int(local.max()) + 1):
            piece = local == lab
            if piece.sum() < config.min_area:
                continue
            inst = instance_from_mask(len(found) + 1, piece)
            inst.bbox = BBox(inst.bbox.x0 + roi.x0, inst.bbox.y0 + roi.y0,
                             inst.bbox.x1 + roi.x0, inst.bbox.y1 + roi.y0)
            found.append(inst)
    candidates = InstanceSet(found, shape)
    result = match_to_points(candidates, points, config.match_max_dist)

    if stages is not None:
        stages.arrays["a_entropy"] = blurred
        stages.arrays["b_threshold"] = fg
        stages.arrays["b_separated"] = separated
        stages.arrays["c_watershed"] = candidates.to_label_map()
        stages.arrays["d_checked"] = result.to_label_map() > 0
        stages.arrays["e_matched"] = result.to_label_map()
        stages.rois = rois
    return result
