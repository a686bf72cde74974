"""Raster containers and classical image operations.

Grids are plain 2-D numpy arrays indexed ``[y, x]``:

* intensity / entropy grids are ``float64``
* binary masks are ``bool``
* label maps are ``int32`` with 0 as background

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy import ndimage


class BBox(NamedTuple):
    """Axis-aligned box, ``x0``/``y0`` inclusive and ``x1``/``y1`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def slices(self) -> Tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def expand(self, margin: int, shape: Tuple[int, int]) -> "BBox":
        """Grow by ``margin`` on every side, clipped to an ``(H, W)`` frame."""
        h, w = shape
        return BBox(max(0, self.x0 - margin), max(0, self.y0 - margin),
                    min(w, self.x1 + margin), min(h, self.y1 + margin))

    def to_xywh(self) -> List[int]:
        return [self.x0, self.y0, self.width, self.height]


def as_grid(data) -> np.ndarray:
    grid = np.asarray(data, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid contains non-finite values")
    return grid


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at ``radius`` (default ``ceil(3 sigma)``)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(grid, sigma: float, radius: int | None = None) -> np.ndarray:
    """Separable Gaussian blur with reflect padding.

    Parameters
    ----------
    grid : array_like
        2-D scalar grid.
    sigma : float
        Standard deviation in pixels.
    radius : int, optional
        Kernel half-width. Defaults to ``ceil(3 * sigma)``.

    Returns
    -------
    ndarray
        Blurred grid, same shape, ``float64``.
    """
    grid = as_grid(grid)
    kernel = gaussian_kernel(sigma, radius)
    out = ndimage.correlate1d(grid, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def connected_components(mask, connectivity: int = 8) -> np.ndarray:
    """Label maximal connected foreground regions 1..K in raster-scan order."""
    mask = np.asarray(mask, dtype=bool)
    labels, _ = ndimage.label(mask, structure=_structure(connectivity))
    return labels.astype(np.int32)


def distance_transform(mask) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest background.

    Pixels outside the image count as background, so a foreground pixel on
    the frame has distance 1.
    """
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def disk(radius: int) -> np.ndarray:
    """Lattice disk ``{(dx, dy): dx^2 + dy^2 <= radius^2}`` as a boolean footprint."""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def morph(mask, op: str, radius: int) -> np.ndarray:
    """Binary erosion or dilation by a disk; outside the image is background."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    footprint = disk(radius)
    if op == "erode":
        return ndimage.binary_erosion(mask, structure=footprint, border_value=0)
    if op == "dilate":
        return ndimage.binary_dilation(mask, structure=footprint, border_value=0)
    raise ValueError(f"unknown morphological op {op!r}")


def opening(mask, radius: int) -> np.ndarray:
    return morph(morph(mask, "erode", radius), "dilate", radius)


def component_bboxes(labels) -> List[Tuple[int, BBox]]:
    """Tight bounding box of every positive id, in id order."""
    labels = np.asarray(labels)
    out = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = sl
        out.append((idx, BBox(xs.start, ys.start, xs.stop, ys.stop)))
    return out


def compact_labels(labels) -> np.ndarray:
    """Renumber positive ids to 1..K preserving their relative order."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    ids = ids[ids > 0]
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, len(ids) + 1, dtype=np.int32)
    return lut[labels]
