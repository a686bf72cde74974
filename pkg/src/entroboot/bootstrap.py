"""Per-pixel label distribution and its entropy from sparse point labels.

A naive-Bayes posterior over three photometric features is trained on the
sparse label mask (dots = nucleus, everything else = background) and so
estimates P(labeled nucleus | features). Its binary entropy is large where
nuclei are and near zero on background.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import entr, expit

from .raster import as_grid, gaussian_blur

PROB_CLAMP = 1e-9


def extract_features(image, blur_sigma: float = 2.0, std_window: int = 5) -> np.ndarray:
    """Stack raw intensity, blurred intensity and local standard deviation.

    Returns an ``(H, W, 3)`` array.
    """
    image = as_grid(image)
    blurred = gaussian_blur(image, blur_sigma)
    half = std_window // 2
    padded = np.pad(image, half, mode="symmetric")
    windows = sliding_window_view(padded, (std_window, std_window))
    local_std = windows.std(axis=(-2, -1))
    return np.stack([image, blurred, local_std], axis=-1)


@dataclass
class PixelBayesModel:
    """Naive-Bayes model with one smoothed histogram per class and feature.

    ``log_lik`` has shape ``(2, n_features, bins)``; row 0 is background,
    row 1 nucleus.
    """

    edges: np.ndarray
    log_lik: np.ndarray
    prior_pos: float
    laplace_alpha: float

    @property
    def bins(self) -> int:
        return self.log_lik.shape[-1]

    def bin_index(self, features: np.ndarray) -> np.ndarray:
        return _bin_index(features, self.edges, self.bins)


def _bin_index(features: np.ndarray, edges: np.ndarray, bins: int) -> np.ndarray:
    """Flattened ``(N, n_features)`` bin indices; out-of-range values clamp to the end bins."""
    n_feat = features.shape[-1]
    flat = features.reshape(-1, n_feat)
    idx = np.empty(flat.shape, dtype=np.intp)
    for k in range(n_feat):
        lo, hi = edges[k]
        scaled = (flat[:, k] - lo) / (hi - lo) * bins
        idx[:, k] = np.clip(np.floor(scaled), 0, bins - 1).astype(np.intp)
    return idx


def _edges(features: np.ndarray) -> np.ndarray:
    # intensity-like features live in [0, 1]; the std feature spans its observed range
    edges = np.tile([0.0, 1.0], (features.shape[-1], 1))
    top = float(features[..., -1].max())
    edges[-1] = [0.0, top if top > 0 else 1.0]
    return edges


def fit_pixel_bayes(features: np.ndarray, labels: np.ndarray, bins: int = 32,
                    laplace_alpha: float = 1.0) -> PixelBayesModel:
    """Fit class-conditional feature histograms to a binary label mask."""
    labels = np.asarray(labels, dtype=bool).ravel()
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("labels must contain both nucleus and background pixels")
    if bins < 1 or laplace_alpha <= 0:
        raise ValueError("bins must be >= 1 and laplace_alpha > 0")

    edges = _edges(features)
    idx = _bin_index(features, edges, bins)
    log_lik = np.empty((2, features.shape[-1], bins))
    for cls, sel in enumerate((~labels, labels)):
        n_cls = int(sel.sum())
        for k in range(idx.shape[1]):
            counts = np.bincount(idx[sel, k], minlength=bins)
            log_lik[cls, k] = np.log((counts + laplace_alpha) / (n_cls + laplace_alpha * bins))
    return PixelBayesModel(edges, log_lik, n_pos / labels.size, laplace_alpha)


def predict_prob_map(model: PixelBayesModel, features: np.ndarray) -> np.ndarray:
    """Posterior P(nucleus label | features) per pixel, clamped away from 0 and 1."""
    idx = model.bin_index(features)
    cols = np.arange(idx.shape[1])
    ratio = model.log_lik[1, cols, idx] - model.log_lik[0, cols, idx]
    log_odds = np.log(model.prior_pos) - np.log1p(-model.prior_pos) + ratio.sum(axis=1)
    prob = np.clip(expit(log_odds), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return prob.reshape(features.shape[:-1])


def entropy_map(prob) -> np.ndarray:
    """Binary entropy in nats with ``0 ln 0 = 0``.

    Evaluated through ``max(p, 1 - p)`` so that ``H(p) == H(1 - p)`` holds
    bit-for-bit.
    """
    p = np.asarray(prob, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    big = np.maximum(p, 1.0 - p)
    return entr(big) + entr(1.0 - big)


def normalize(grid) -> Tuple[np.ndarray, float, float]:
    """Min-max scale to [0, 1]; a flat grid maps to zeros."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    if hi <= lo:
        return np.zeros_like(grid), lo, hi
    return (grid - lo) / (hi - lo), lo, hi


@dataclass(frozen=True)
class BootstrapConfig:
    bins: int = 32
    laplace_alpha: float = 1.0
    feature_sigma: float = 2.0
    std_window: int = 5


def bootstrap_entropy(image, sparse_labels, config: BootstrapConfig = BootstrapConfig()):
    """Fit on ``sparse_labels`` and return ``(prob, entropy)`` for ``image``."""
    feats = extract_features(image, config.feature_sigma, config.std_window)
    model = fit_pixel_bayes(feats, sparse_labels, config.bins, config.laplace_alpha)
    prob = predict_prob_map(model, feats)
    return prob, entropy_map(prob)
