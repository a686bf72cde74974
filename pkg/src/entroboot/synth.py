"""Synthetic nucleus scenes with exact instance ground truth.

Nuclei are filled ellipses on a flat background, followed by an optical
blur and additive Gaussian noise. Each scene is fully determined by its
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Tuple

import numpy as np

from . import files
from .raster import compact_labels, gaussian_blur


class PlacementError(RuntimeError):
    """Raised when a nucleus cannot be placed without overlapping others."""

    def __init__(self, index: int, tries: int):
        super().__init__(f"could not place nucleus {index} without overlap after {tries} tries")
        self.index = index


@dataclass(frozen=True)
class SceneConfig:
    width: int = 256
    height: int = 256
    nucleus_count: int = 40
    radius_range: Tuple[float, float] = (6.0, 16.0)
    eccentricity_max: float = 0.8
    overlap_allowed: bool = False
    contrast: Tuple[float, float] = (0.50, 0.62)
    noise_sigma: float = 0.16
    blur_sigma: float = 2.0
    seed: int = 0
    max_tries: int = field(default=1000, repr=False)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.nucleus_count < 0:
            raise ValueError("nucleus_count must be >= 0")
        rmin, rmax = self.radius_range
        if not 0 < rmin <= rmax:
            raise ValueError(f"invalid radius_range {self.radius_range}")
        if 2 * rmax + 1 > min(self.width, self.height):
            raise ValueError("radius_range too large for the scene")
        if not 0 <= self.eccentricity_max < 1:
            raise ValueError("eccentricity_max must lie in [0, 1)")
        if self.contrast[0] == self.contrast[1]:
            raise ValueError("nucleus and background means must differ")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ValueError("noise_sigma and blur_sigma must be >= 0")


def ellipse_mask(a: float, b: float, theta: float) -> np.ndarray:
    """Footprint of an ellipse centred on the middle pixel of an odd square."""
    r = int(math.ceil(max(a, b)))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    u = xx * c + yy * s
    v = -xx * s + yy * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_scene(config: SceneConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Render one scene.

    Returns
    -------
    image : ndarray of float64
        Intensities in [0, 1].
    labels : ndarray of int32
        Instance ids 1..K in placement order, 0 for background.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    h, w = config.height, config.width
    rmin, rmax = config.radius_range
    labels = np.zeros((h, w), dtype=np.int32)

    for idx in range(config.nucleus_count):
        a = rng.uniform(rmin, rmax)
        e = rng.uniform(0.0, config.eccentricity_max)
        b = max(rmin, a * math.sqrt(1.0 - e * e))
        theta = rng.uniform(0.0, math.pi)
        foot = ellipse_mask(a, b, theta)
        r = foot.shape[0] // 2
        for _ in range(config.max_tries):
            cx = int(rng.integers(r, w - r))
            cy = int(rng.integers(r, h - r))
            window = labels[cy - r:cy + r + 1, cx - r:cx + r + 1]
            if config.overlap_allowed or not np.any(window[foot]):
                window[foot] = idx + 1
                break
        else:
            raise PlacementError(idx, config.max_tries)

    if config.overlap_allowed:
        labels = compact_labels(labels)

    nucleus_mean, background_mean = config.contrast
    image = np.where(labels > 0, nucleus_mean, background_mean).astype(np.float64)
    if config.blur_sigma > 0:
        image = gaussian_blur(image, config.blur_sigma)
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0), labels


def derive_seed(master_seed: int, index: int) -> int:
    """Per-image seed: 64-bit XOR of the master seed with the image index."""
    return (int(master_seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF


def write_scene(directory: Path, image: np.ndarray, labels: np.ndarray) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files.write_grid(directory / "image.png", image)
    files.write_labels(directory / "labels.png", labels)


def iter_dataset(root: Path) -> Iterator[Tuple[str, np.ndarray, np.ndarray]]:
    """Yield ``(name, image, labels)`` for each directory holding an
    ``image.png``/``labels.png`` pair, in sorted order."""
    root = Path(root)
    candidates = [root] + sorted(p for p in root.iterdir() if p.is_dir())
    for d in candidates:
        if (d / "image.png").exists() and (d / "labels.png").exists():
            yield d.name, files.read_image(d / "image.png"), files.read_labels(d / "labels.png")
