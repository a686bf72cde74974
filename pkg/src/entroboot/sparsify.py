"""Turn instance ground truth into weak point annotations.

One dot is sampled uniformly inside each nucleus. The dots can then be
thinned (``keep_fraction``) and displaced (``jitter_max``) to emulate
missed or sloppy annotations, and rasterized into a sparse label mask in
which every pixel outside the dots is background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .raster import component_bboxes, disk, distance_transform


class PointAnnotation(NamedTuple):
    x: int
    y: int
    source_id: Optional[int]


@dataclass(frozen=True)
class SparsifyConfig:
    radius: int = 3
    keep_fraction: float = 1.0
    jitter_max: int = 0
    jitter_mode: str = "uniform"
    seed: int = 0

    def validate(self) -> None:
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.jitter_max < 0:
            raise ValueError("jitter_max must be >= 0")
        if self.jitter_mode not in ("uniform", "gaussian"):
            raise ValueError(f"unknown jitter_mode {self.jitter_mode!r}")


@dataclass(frozen=True)
class EpsilonEstimate:
    labeled_nucleus_pixels: int
    total_nucleus_pixels: int

    @property
    def epsilon(self) -> float:
        return self.labeled_nucleus_pixels / self.total_nucleus_pixels


def _jitter_offsets(jitter_max: int, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice offsets within ``jitter_max`` and their sampling weights."""
    foot = disk(jitter_max)
    dy, dx = np.nonzero(foot)
    dy = dy - jitter_max
    dx = dx - jitter_max
    if mode == "uniform":
        weights = np.ones(len(dx))
    else:
        sigma = jitter_max / 2.0
        weights = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
    return np.stack([dx, dy], axis=1), weights / weights.sum()


def sample_points(gt: np.ndarray, config: SparsifyConfig = SparsifyConfig()) -> List[PointAnnotation]:
    """Sample one point per instance of ``gt``, then thin and jitter them.

    Points are returned in ascending instance-id order. A jittered point
    that leaves its nucleus loses its ``source_id``.
    """
    config.validate()
    gt = np.asarray(gt)
    h, w = gt.shape
    rng = np.random.default_rng(config.seed)

    flat = gt.ravel()
    order = np.argsort(flat, kind="stable")
    ids, starts, counts = np.unique(flat[order], return_index=True, return_counts=True)
    points = []
    for inst, start, count in zip(ids, starts, counts):
        if inst <= 0:
            continue
        pix = order[start + int(rng.integers(count))]
        points.append((int(pix % w), int(pix // w), int(inst)))

    n_keep = math.floor(config.keep_fraction * len(points))
    if n_keep < len(points):
        chosen = np.sort(rng.choice(len(points), size=n_keep, replace=False))
        points = [points[i] for i in chosen]

    if config.jitter_max > 0 and points:
        offsets, weights = _jitter_offsets(config.jitter_max, config.jitter_mode)
        picks = rng.choice(len(offsets), size=len(points), p=weights)
        moved = []
        for (x, y, inst), k in zip(points, picks):
            nx = min(max(x + int(offsets[k, 0]), 0), w - 1)
            ny = min(max(y + int(offsets[k, 1]), 0), h - 1)
            moved.append((nx, ny, inst))
        points = moved

    return [PointAnnotation(x, y, inst if gt[y, x] == inst else None) for x, y, inst in points]


def rasterize_points(points: Sequence[PointAnnotation], radius: int, shape: Tuple[int, int]) -> np.ndarray:
    """Union of lattice disks of ``radius`` around each point, clipped to ``shape``."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    h, w = shape
    foot = disk(radius)
    out = np.zeros((h, w), dtype=bool)
    for p in points:
        y0, y1 = max(p.y - radius, 0), min(p.y + radius + 1, h)
        x0, x1 = max(p.x - radius, 0), min(p.x + radius + 1, w)
        fy, fx = y0 - (p.y - radius), x0 - (p.x - radius)
        out[y0:y1, x0:x1] |= foot[fy:fy + (y1 - y0), fx:fx + (x1 - x0)]
    return out


def estimate_epsilon(label_mask: np.ndarray, gt: np.ndarray) -> EpsilonEstimate:
    """Fraction of ground-truth nucleus pixels that carry a nucleus label."""
    label_mask = np.asarray(label_mask, dtype=bool)
    fg = np.asarray(gt) > 0
    if label_mask.shape != fg.shape:
        raise ValueError("label mask and ground truth differ in shape")
    total = int(fg.sum())
    if total == 0:
        raise ValueError("undefined epsilon: ground truth has no nucleus pixels")
    return EpsilonEstimate(int((label_mask & fg).sum()), total)


def interior_points(gt: np.ndarray) -> List[PointAnnotation]:
    """The deepest pixel of each instance (distance-transform peak, first in
    raster order on ties), in ascending id order."""
    gt = np.asarray(gt)
    points = []
    for inst, box in component_bboxes(gt):
        local = distance_transform(gt[box.slices] == inst)
        y, x = np.unravel_index(int(np.argmax(local)), local.shape)
        points.append(PointAnnotation(int(x) + box.x0, int(y) + box.y0, int(inst)))
    return points
