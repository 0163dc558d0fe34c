"""Tile-based front-to-back alpha compositing of projected 3D Gaussians.

Kernel footprint convention shared by every renderer here: a kernel contributes
``alpha = min(ALPHA_MAX, opacity * exp(-m2 / 2))`` at a pixel center whose squared
Mahalanobis distance ``m2`` under the dilated 2D covariance is at most
``CUTOFF_M2`` (the 3-sigma ellipse), and zero elsewhere.  Tiles therefore only
accelerate the brute-force result, they never change it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.camera import Camera
from ..scene.gaussians import GaussianScene

TILE = 16
DILATION = 0.3          # px^2 added to projected covariance
ALPHA_MAX = 0.99
T_MIN = 1e-4            # transmittance early-out
CUTOFF_M2 = 9.0
NEAR = 0.01


@dataclass
class Projected:
    means: np.ndarray     # (N, 2) pixel coords
    cov: np.ndarray       # (N, 2, 2)
    conic: np.ndarray     # (N, 3) inverse covariance (a, b, c)
    depth: np.ndarray     # (N,)
    opacity: np.ndarray   # (N,)
    payload: np.ndarray   # (N, C)
    radius: np.ndarray    # (N, 2) half-extent of the 3-sigma ellipse box
    visible: np.ndarray   # (N,) bool; False = culled (behind camera)


@dataclass
class Framebuffer:
    color: np.ndarray     # (H, W, C)
    alpha: np.ndarray     # (H, W)


def project_gaussians(scene: GaussianScene, camera: Camera, dilation: float = DILATION) -> Projected:
    pc = camera.to_camera(scene.centers)
    z = pc[:, 2]
    visible = z > NEAR
    zs = np.where(visible, z, 1.0)
    n = len(scene)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / zs
    J[:, 0, 2] = -camera.fx * pc[:, 0] / zs**2
    J[:, 1, 1] = camera.fy / zs
    J[:, 1, 2] = -camera.fy * pc[:, 1] / zs**2
    M = J @ camera.R
    cov = M @ scene.covariances() @ np.swapaxes(M, 1, 2)
    cov[:, 0, 0] += dilation
    cov[:, 1, 1] += dilation
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    conic = np.stack([cov[:, 1, 1] / det, -cov[:, 0, 1] / det, cov[:, 0, 0] / det], 1)
    means = np.stack([camera.fx * pc[:, 0] / zs + camera.cx, camera.fy * pc[:, 1] / zs + camera.cy], 1)
    radius = 3.0 * np.sqrt(np.stack([cov[:, 0, 0], cov[:, 1, 1]], 1))
    return Projected(means, cov, conic, z, scene.opacities, scene.payload, radius, visible)


def project_gaussian(scene: GaussianScene, index: int, camera: Camera) -> Projected | None:
    """Project a single kernel; ``None`` signals it was culled."""
    p = project_gaussians(scene.subset([index]), camera)
    return p if p.visible[0] else None


def kernel_alpha(proj: Projected, idx: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Alpha of kernels ``idx`` at pixel centers (px, py): shape (len(idx), len(px))."""
    dx = px[None, :] - proj.means[idx, 0:1]
    dy = py[None, :] - proj.means[idx, 1:2]
    a, b, c = (proj.conic[idx, k : k + 1] for k in range(3))
    m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    alpha = np.minimum(ALPHA_MAX, proj.opacity[idx, None] * np.exp(-0.5 * m2))
    return np.where(m2 <= CUTOFF_M2, alpha, 0.0)


def _composite(alpha: np.ndarray, payload: np.ndarray):
    """Front-to-back compositing of (K, P) alphas; returns (P, C) color and (P,) transmittance."""
    if alpha.shape[0] == 0:
        return np.zeros((alpha.shape[1], payload.shape[1])), np.ones(alpha.shape[1])
    trans = np.cumprod(1.0 - alpha, axis=0)
    before = np.vstack([np.ones((1, alpha.shape[1])), trans[:-1]])
    live = before >= T_MIN
    weight = np.where(live, alpha * before, 0.0)
    # transmittance left after the last live kernel
    n_live = live.sum(axis=0)
    final = np.where(n_live == alpha.shape[0], trans[-1],
                     before[np.minimum(n_live, alpha.shape[0] - 1), np.arange(alpha.shape[1])])
    return weight.T @ payload, final


def composite_pixel(payloads, alphas, background=None):
    """Eq.-style sequential compositing of pre-sorted (payload, alpha) pairs at one pixel."""
    payloads = np.asarray(payloads, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    ch = payloads.shape[1] if payloads.ndim == 2 and payloads.size else (
        len(background) if background is not None else 3)
    out = np.zeros(ch)
    trans = 1.0
    for c, a in zip(payloads, alphas):
        if trans < T_MIN:
            break
        out += c * a * trans
        trans *= 1.0 - a
    if background is not None:
        out += trans * np.asarray(background, dtype=np.float64)
    return out


def _background(background, channels: int) -> np.ndarray:
    if background is None:
        return np.zeros(channels)
    return np.broadcast_to(np.asarray(background, dtype=np.float64), (channels,))


def rasterize(scene: GaussianScene, camera: Camera, background=None, tile_size: int = TILE,
              tile_order: np.ndarray | None = None) -> Framebuffer:
    """Tiled renderer; ``tile_order`` permutes tile processing (result is independent)."""
    W, H = camera.width, camera.height
    C = scene.channels
    bg = _background(background, C)
    color = np.zeros((H, W, C))
    alpha_img = np.zeros((H, W))
    color[:] = bg
    if len(scene) == 0:
        return Framebuffer(color, alpha_img)
    proj = project_gaussians(scene, camera)

    # slight padding so rounding at the ellipse edge can never drop a pixel
    rad = proj.radius * (1.0 + 1e-9) + 1e-9
    x0 = np.ceil(proj.means[:, 0] - rad[:, 0])
    x1 = np.floor(proj.means[:, 0] + rad[:, 0])
    y0 = np.ceil(proj.means[:, 1] - rad[:, 1])
    y1 = np.floor(proj.means[:, 1] + rad[:, 1])
    keep = proj.visible & (x1 >= 0) & (y1 >= 0) & (x0 <= W - 1) & (y0 <= H - 1) & (x0 <= x1) & (y0 <= y1)
    idx = np.nonzero(keep)[0]
    ntx = (W + tile_size - 1) // tile_size
    nty = (H + tile_size - 1) // tile_size
    tx0 = (np.clip(x0[idx], 0, W - 1) // tile_size).astype(np.int64)
    tx1 = (np.clip(x1[idx], 0, W - 1) // tile_size).astype(np.int64)
    ty0 = (np.clip(y0[idx], 0, H - 1) // tile_size).astype(np.int64)
    ty1 = (np.clip(y1[idx], 0, H - 1) // tile_size).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    kern = np.repeat(idx, counts)
    # offset of each pair within its kernel's tile block
    off = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    nxr = np.repeat(nx, counts)
    tiles = (np.repeat(ty0, counts) + off // nxr) * ntx + np.repeat(tx0, counts) + off % nxr
    order = np.lexsort((kern, proj.depth[kern], tiles))
    tiles, kern = tiles[order], kern[order]
    bounds = np.searchsorted(tiles, np.arange(ntx * nty + 1))

    todo = np.arange(ntx * nty) if tile_order is None else np.asarray(tile_order)
    for tile in todo:
        lo, hi = bounds[tile], bounds[tile + 1]
        if lo == hi:
            continue
        ty, tx = divmod(int(tile), ntx)
        ys = np.arange(ty * tile_size, min((ty + 1) * tile_size, H))
        xs = np.arange(tx * tile_size, min((tx + 1) * tile_size, W))
        py, px = (g.ravel().astype(np.float64) for g in np.meshgrid(ys, xs, indexing="ij"))
        ks = kern[lo:hi]
        a = kernel_alpha(proj, ks, px, py)
        rgb, trans = _composite(a, proj.payload[ks])
        block = rgb + trans[:, None] * bg
        color[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = block.reshape(len(ys), len(xs), C)
        alpha_img[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = (1.0 - trans).reshape(len(ys), len(xs))
    return Framebuffer(color, alpha_img)


def rasterize_reference(scene: GaussianScene, camera: Camera, background=None,
                        chunk: int = 4096) -> Framebuffer:
    """Brute force: every visible kernel evaluated at every pixel, one global depth sort."""
    W, H = camera.width, camera.height
    C = scene.channels
    bg = _background(background, C)
    py, px = (g.ravel().astype(np.float64) for g in np.mgrid[0:H, 0:W])
    color = np.empty((H * W, C))
    trans_all = np.empty(H * W)
    if len(scene) == 0:
        color[:] = bg
        return Framebuffer(color.reshape(H, W, C), np.zeros((H, W)))
    proj = project_gaussians(scene, camera)
    vis = np.nonzero(proj.visible)[0]
    idx = vis[np.lexsort((vis, proj.depth[vis]))]
    for s in range(0, H * W, chunk):
        a = kernel_alpha(proj, idx, px[s : s + chunk], py[s : s + chunk])
        rgb, trans = _composite(a, proj.payload[idx])
        color[s : s + chunk] = rgb + trans[:, None] * bg
        trans_all[s : s + chunk] = trans
    return Framebuffer(color.reshape(H, W, C), (1.0 - trans_all).reshape(H, W))
