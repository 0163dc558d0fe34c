"""Coordinate normalization, positional embedding and feature-grid sampling."""

from __future__ import annotations

import numpy as np

from ..diffengine import DualVector, Tensor, concat, constant
from ..diffengine import tensor as T
from ..scene.camera import Camera, ProjectionError


def project_dual(points: DualVector, camera: Camera) -> tuple[DualVector, DualVector, DualVector]:
    """Pixel x, pixel y and camera depth of world points (each an (N, 1) dual)."""
    pc = points @ Tensor(camera.R.T) + Tensor(camera.t)
    z = pc.column(2)
    if np.any(z.primal.data <= 0):
        raise ProjectionError("point behind camera")
    inv_z = z.reciprocal()
    xp = pc.column(0) * inv_z * camera.fx + camera.cx
    yp = pc.column(1) * inv_z * camera.fy + camera.cy
    return xp, yp, z


def normalize_dual(X: DualVector, camera: Camera, width: int, height: int,
                   horizon: float) -> DualVector:
    """(x, y, z, t) world/seconds -> (x', y', z', t') as an (N, 4) dual."""
    if horizon <= 0:
        raise ValueError("time horizon must be positive")
    xp, yp, d = project_dual(X.column(slice(0, 3)), camera)
    xn = xp * (2.0 / (width - 1)) - 1.0
    yn = yp * (2.0 / (height - 1)) - 1.0
    zn = d.maximum(1.0).reciprocal() * 2.0 - 1.0
    tn = X.column(3) * (1.0 / horizon)
    return concat([xn, yn, zn, tn])


def normalize_coords(p_world, t, camera: Camera, width: int, height: int, horizon: float) -> np.ndarray:
    """Numeric version of :func:`normalize_dual`; accepts one point or a batch."""
    p = np.atleast_2d(np.asarray(p_world, dtype=np.float64))
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(p),))
    out = normalize_dual(constant(np.c_[p, tt]), camera, width, height, horizon).primal.data
    return out[0] if np.ndim(p_world) == 1 else out


def embed_dim(n_coords: int, n_freqs: int) -> int:
    return n_coords * (1 + 2 * n_freqs)


def positional_embedding_dual(c: DualVector, n_freqs: int) -> DualVector:
    """[c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^(L-1) pi c), cos(2^(L-1) pi c)]."""
    if n_freqs < 1:
        raise ValueError("need at least one frequency")
    parts = [c]
    for level in range(n_freqs):
        arg = c * (np.pi * 2.0**level)
        parts += [arg.sin(), arg.cos()]
    return concat(parts)


def positional_embedding(c, n_freqs: int) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    out = positional_embedding_dual(constant(np.atleast_2d(c)), n_freqs).primal.data
    return out[0] if c.ndim == 1 else out


def feature_rows(Z: Tensor) -> Tensor:
    """(C, Hg, Wg) grid -> (Hg*Wg, C) row table."""
    c = Z.shape[0]
    return T.reshape(T.swapaxes(T.reshape(Z, (c, -1)), 0, 1), (-1, c))


def sample_grid_dual(Z: Tensor, gx: DualVector, gy: DualVector) -> DualVector:
    """Bilinear lookup of Z at continuous grid coords (clamped to the grid)."""
    c, hg, wg = Z.shape
    gx = gx.clip(0.0, wg - 1.0)
    gy = gy.clip(0.0, hg - 1.0)
    ix = np.minimum(np.floor(gx.primal.data[:, 0]), max(wg - 2, 0)).astype(np.int64)
    iy = np.minimum(np.floor(gy.primal.data[:, 0]), max(hg - 2, 0)).astype(np.int64)
    ax = gx - Tensor(ix[:, None].astype(np.float64))
    ay = gy - Tensor(iy[:, None].astype(np.float64))
    rows = feature_rows(Z)
    x1 = np.minimum(ix + 1, wg - 1)
    y1 = np.minimum(iy + 1, hg - 1)
    f00 = T.take_rows(rows, iy * wg + ix)
    f01 = T.take_rows(rows, iy * wg + x1)
    f10 = T.take_rows(rows, y1 * wg + ix)
    f11 = T.take_rows(rows, y1 * wg + x1)
    bx = 1.0 - ax
    by = 1.0 - ay
    return (bx * by) * f00 + (ax * by) * f01 + (bx * ay) * f10 + (ax * ay) * f11


def pixel_to_grid(p, stride: int):
    """Image pixel coordinate -> feature-grid coordinate (cell centers aligned)."""
    return (p + 0.5) * (1.0 / stride) - 0.5


def sample_feature(Z, p_world, camera: Camera, stride: int) -> np.ndarray:
    """Bilinear feature at the projection of ``p_world`` (numeric convenience)."""
    Zt = Z if isinstance(Z, Tensor) else Tensor(Z)
    p = constant(np.atleast_2d(np.asarray(p_world, dtype=np.float64)))
    xp, yp, _ = project_dual(p, camera)
    out = sample_grid_dual(Zt, pixel_to_grid(xp, stride), pixel_to_grid(yp, stride)).primal.data
    return out[0] if np.ndim(p_world) == 1 else out
