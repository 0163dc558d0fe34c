"""Layered depth images via single-linkage clustering of depth values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LdiLayer:
    color: np.ndarray      # (H, W, C)
    depth: np.ndarray      # (H, W)
    valid: np.ndarray      # (H, W) bool
    depth_range: tuple[float, float]


def depth_clusters(depth: np.ndarray, threshold: float) -> np.ndarray:
    """Label each pixel with its single-linkage cluster id (0 = nearest).

    In one dimension single linkage reduces to cutting the sorted values
    wherever consecutive gaps reach ``threshold``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.size == 0:
        raise ValueError("empty depth map")
    if not np.isfinite(depth).all() or np.any(depth <= 0):
        raise ValueError("depth must be finite and positive")
    values, inverse = np.unique(depth.ravel(), return_inverse=True)
    cuts = np.concatenate([[0], np.cumsum(np.diff(values) >= threshold)])
    return cuts[inverse].reshape(depth.shape)


def cluster_ldi(depth: np.ndarray, threshold: float, color: np.ndarray | None = None) -> list[LdiLayer]:
    labels = depth_clusters(depth, threshold)
    if color is None:
        color = np.zeros(depth.shape + (0,))
    layers = []
    for k in range(labels.max() + 1):
        valid = labels == k
        d = depth[valid]
        layers.append(LdiLayer(np.where(valid[..., None], color, 0.0),
                               np.where(valid, depth, 0.0), valid,
                               (float(d.min()), float(d.max()))))
    return layers
