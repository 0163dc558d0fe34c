"""Gaussian kernel scenes and their construction from (image, depth, mask)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import Camera
from .ldi import cluster_ldi

SCALE_K = 0.7  # kernel footprint in pixels at the native view


@dataclass
class GaussianScene:
    centers: np.ndarray     # (N, 3)
    quats: np.ndarray       # (N, 4) unit, (w, x, y, z)
    scales: np.ndarray      # (N, 3) > 0
    opacities: np.ndarray   # (N,) in [0, 1]
    payload: np.ndarray     # (N, C)
    fluid: np.ndarray       # (N,) bool
    layer: np.ndarray | None = None
    pixel: np.ndarray | None = None   # (N, 2) source pixel (row, col), if built from an image

    def __post_init__(self):
        n = len(self.centers)
        for name in ("quats", "scales", "opacities", "payload", "fluid"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def channels(self) -> int:
        return self.payload.shape[1]

    @classmethod
    def empty(cls, channels: int = 3) -> "GaussianScene":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, channels)), np.zeros(0, dtype=bool))

    def rotations(self) -> np.ndarray:
        q = self.quats
        return Rotation.from_quat(np.stack([q[:, 1], q[:, 2], q[:, 3], q[:, 0]], 1)).as_matrix() \
            if len(q) else np.zeros((0, 3, 3))

    def covariances(self) -> np.ndarray:
        """Sigma = R S S^T R^T per kernel, (N, 3, 3)."""
        M = self.rotations() * self.scales[:, None, :]
        return M @ np.swapaxes(M, 1, 2)

    def with_centers(self, centers: np.ndarray) -> "GaussianScene":
        return replace(self, centers=np.asarray(centers, dtype=np.float64))

    def with_opacities(self, opacities: np.ndarray) -> "GaussianScene":
        return replace(self, opacities=np.asarray(opacities, dtype=np.float64))

    def subset(self, idx) -> "GaussianScene":
        pick = lambda a: None if a is None else a[idx]
        return GaussianScene(self.centers[idx], self.quats[idx], self.scales[idx],
                             self.opacities[idx], self.payload[idx], self.fluid[idx],
                             pick(self.layer), pick(self.pixel))

    @staticmethod
    def concat(scenes: list["GaussianScene"]) -> "GaussianScene":
        def cat(name):
            parts = [getattr(s, name) for s in scenes]
            return None if any(p is None for p in parts) else np.concatenate(parts)
        return GaussianScene(*(cat(n) for n in ("centers", "quats", "scales", "opacities",
                                                "payload", "fluid", "layer", "pixel")))


def lift_pixel(camera: Camera, pixel, depth) -> np.ndarray:
    """World point projecting to ``pixel`` (u, v) at camera depth ``depth``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    single = pixel.ndim == 1
    pts = camera.lift(np.atleast_2d(pixel), np.atleast_1d(depth))
    return pts[0] if single else pts


def gaussians_from_image(image: np.ndarray, depth: np.ndarray, mask: np.ndarray,
                         camera: Camera, payload: np.ndarray | None = None,
                         scale_k: float = SCALE_K, ldi_threshold: float | None = None,
                         valid: np.ndarray | None = None) -> GaussianScene:
    """One isotropic kernel per valid pixel, lifted along its depth.

    Kernels are tagged fluid/static from ``mask`` and with their LDI layer index;
    ``payload`` (H, W, C) defaults to the image colors.
    """
    h, w = depth.shape
    if image.shape[:2] != (h, w) or mask.shape != (h, w):
        raise ValueError("image, depth and mask must share spatial dims")
    if (camera.height, camera.width) != (h, w):
        raise ValueError("camera dims do not match inputs")
    payload = image if payload is None else payload
    if payload.shape[:2] != (h, w):
        raise ValueError("payload dims do not match inputs")
    valid = np.ones((h, w), dtype=bool) if valid is None else valid.astype(bool)
    thr = np.inf if ldi_threshold is None else ldi_threshold
    layers = cluster_ldi(np.where(valid, depth, np.nanmax(depth[valid]) if valid.any() else 1.0), thr)
    layer_of = np.zeros((h, w), dtype=np.int64)
    for k, layer in enumerate(layers):
        layer_of[layer.valid] = k

    rows, cols = np.nonzero(valid)
    d = depth[rows, cols].astype(np.float64)
    centers = camera.lift(np.stack([cols, rows], 1).astype(np.float64), d)
    n = len(rows)
    s = scale_k * d / camera.fx
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianScene(
        centers=centers, quats=quats, scales=np.repeat(s[:, None], 3, 1),
        opacities=np.ones(n),
        payload=np.asarray(payload, dtype=np.float64)[rows, cols].reshape(n, -1),
        fluid=np.asarray(mask, dtype=bool)[rows, cols],
        layer=layer_of[rows, cols], pixel=np.stack([rows, cols], 1))
