"""Class-activation saliency and the region-ranking criterion.

A local white-box image model supplies feature maps and class-score gradients
at one layer; the heatmap is the ReLU of the gradient-weighted channel sum,
upsampled bilinearly to frame resolution. Regions are ranked by a convex
combination of normalized heatmap mass and normalized area, and the top ranks
are kept up to a cumulative-area bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ConfigError
from .segmentation import RegionSet


@dataclass
class SignificanceScores:
    l_grad: np.ndarray
    l_area: np.ndarray
    l_total: np.ndarray


@dataclass
class SelectedRegions:
    region_ids: list[int]   # descending by combined score

    @property
    def r(self):
        return len(self.region_ids)


class LinearFeatureModel:
    """White-box image model with analytic gradients.

    Features are the frame average-pooled to (3, fh, fw); the score of class c
    is the inner product of a weight tensor with those features. Gradients of
    a class score with respect to the features are the weights themselves, so
    the saliency computation is exact.
    """

    def __init__(self, weights, pool_to=(8, 8)):
        self.weights = np.asarray(weights, dtype=np.float64)  # (n_classes, 3, fh, fw)
        if self.weights.ndim != 4:
            raise ConfigError("weights must be (n_classes, 3, fh, fw)")
        self.pool_to = pool_to

    @property
    def num_classes(self):
        return self.weights.shape[0]

    def features(self, frame):
        fh, fw = self.pool_to
        h, w = frame.shape[:2]
        if h % fh == 0 and w % fw == 0:
            pooled = frame.reshape(fh, h // fh, fw, w // fw, 3).mean(axis=(1, 3))
            return np.moveaxis(pooled, -1, 0)
        out = np.empty((3, fh, fw))
        for i, rg in enumerate(np.array_split(np.arange(h), fh)):
            for j, cg in enumerate(np.array_split(np.arange(w), fw)):
                out[:, i, j] = frame[np.ix_(rg, cg)].mean(axis=(0, 1))
        return out

    def predict_scores(self, frame):
        f = self.features(frame)
        return np.einsum("ckij,kij->c", self.weights, f)

    def top1(self, frame) -> int:
        return int(np.argmax(self.predict_scores(frame)))

    def class_activations(self, frame, class_id: int):
        if not 0 <= class_id < self.num_classes:
            raise ConfigError(f"class_id {class_id} outside the model's label set")
        feats = self.features(frame)
        grads = self.weights[class_id]
        return feats, grads


def gradcam_heatmap(model, frame, class_id: int):
    """Gradient-weighted class activation map at frame resolution.

    Channel weights are the spatially averaged class-score gradients; the
    weighted channel sum is rectified and bilinearly upsampled.
    """
    feats, grads = model.class_activations(frame, class_id)
    weights = grads.mean(axis=(1, 2))            # 1/SR * sum over positions
    cam = np.einsum("k,kij->ij", weights, feats)
    cam = np.maximum(cam, 0.0)
    h, w = frame.shape[:2]
    return kernels.bilinear_resize(cam, h, w)


def _minmax_normalize(raw):
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        # degenerate: undefined normalization maps to all zeros
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def grad_significance(regions: RegionSet, heatmap) -> np.ndarray:
    """Min-max normalized heatmap mass per region."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    raw = np.array([float(heatmap[m].sum()) for m in regions.masks])
    return _minmax_normalize(raw)


def area_significance(regions: RegionSet) -> np.ndarray:
    """Min-max normalized pixel count per region."""
    return _minmax_normalize(regions.areas().astype(np.float64))


def total_significance(l_grad, l_area, alpha_select: float) -> np.ndarray:
    if not 0.0 <= alpha_select <= 1.0:
        raise ConfigError("alpha_select must lie in [0,1]")
    l_grad = np.asarray(l_grad, dtype=np.float64)
    l_area = np.asarray(l_area, dtype=np.float64)
    if l_grad.shape != l_area.shape:
        raise ConfigError("score length mismatch")
    return (1.0 - alpha_select) * l_grad + alpha_select * l_area


def rank_regions(regions: RegionSet, l_total) -> list[int]:
    """Indices into the region list, descending by combined score.

    Ties break by larger area, then by lower region id.
    """
    areas = regions.areas()
    ids = regions.region_ids
    return sorted(range(regions.num_regions),
                  key=lambda i: (-l_total[i], -areas[i], ids[i]))


def select_top_r(regions: RegionSet, l_total, mu: float) -> SelectedRegions:
    """Keep the best-ranked prefix whose preceding cumulative area stays under
    mu times the total segmented area; always keeps at least one region."""
    if not 0.0 <= mu <= 1.0:
        raise ConfigError("mu must lie in [0,1]")
    order = rank_regions(regions, l_total)
    areas = regions.areas()
    total = float(areas.sum())
    r = 1
    prefix = 0.0
    for rp in range(1, regions.num_regions + 1):
        # area of the first rp-1 ranked regions must stay under the bound
        if prefix <= mu * total:
            r = rp
        else:
            break
        prefix += areas[order[rp - 1]]
    chosen = order[:r]
    return SelectedRegions([regions.region_ids[i] for i in chosen])


def score_regions(regions: RegionSet, heatmap, alpha_select: float) -> SignificanceScores:
    l_grad = grad_significance(regions, heatmap)
    l_area = area_significance(regions)
    return SignificanceScores(l_grad, l_area,
                              total_significance(l_grad, l_area, alpha_select))
