"""Physics-informed and supervision losses over a velocity field.

A *field* is any object exposing ``velocity_dual(X) -> DualVector`` for an (N, 4)
dual of world positions and times, ``velocity(points, t) -> ndarray`` and
``external_force() -> Tensor``.  Both the conditioned network and the analytic
oracles in :mod:`flowsplat.synthlab` satisfy it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .diffengine import DualVector, Tensor
from .diffengine import tensor as T
from .scene.camera import Camera


class Field(Protocol):
    def velocity_dual(self, X: DualVector) -> DualVector: ...
    def velocity(self, points, t) -> np.ndarray: ...
    def external_force(self) -> Tensor: ...


class Region(Protocol):
    def outside(self, points: np.ndarray) -> np.ndarray: ...


@dataclass
class LossWeights:
    ns: float = 1e-2
    div: float = 1e-2
    physics: float = 1e-1
    novel_view: float = 0.0

    def __post_init__(self):
        for k in ("ns", "div", "physics", "novel_view"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")


@dataclass
class SceneFlowSample:
    position: np.ndarray   # (N, 3)
    t: np.ndarray          # (N,)
    u_gt: np.ndarray       # (N, 3)

    def __len__(self):
        return len(self.position)


@dataclass
class BoundaryProbe:
    position: np.ndarray        # (N, 3)
    t: np.ndarray               # (N,)
    stays_inside_gt: np.ndarray  # (N,) bool

    def __len__(self):
        return len(self.position)


@dataclass
class LossReport:
    motion: float = 0.0
    ns: float = 0.0
    div: float = 0.0
    boundary: float = 0.0
    physics: float = 0.0
    total: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("motion", "ns", "div", "boundary", "physics", "total")}


# -- regions -------------------------------------------------------------------

class MaskRegion:
    """Fluid region given by a mask raster seen from ``camera`` (nearest-pixel lookup)."""

    def __init__(self, mask: np.ndarray, camera: Camera):
        self.mask = np.asarray(mask, dtype=bool)
        self.camera = camera

    def outside(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        uv, z = self.camera.project(pts, strict=False)
        h, w = self.mask.shape
        with np.errstate(invalid="ignore"):
            col = np.rint(uv[:, 0])
            row = np.rint(uv[:, 1])
        ok = (z > 0) & np.isfinite(col) & np.isfinite(row) & (col >= 0) & (col <= w - 1) & \
            (row >= 0) & (row <= h - 1)
        out = np.ones(len(pts), dtype=bool)
        out[ok] = ~self.mask[row[ok].astype(np.int64), col[ok].astype(np.int64)]
        return out


def w_indicator(p_displaced, region: Region) -> np.ndarray:
    """1 where the displaced point leaves the fluid region, else 0."""
    return region.outside(np.atleast_2d(p_displaced)).astype(np.float64)


# -- residual operators --------------------------------------------------------

def _query(field_: Field, points, t) -> DualVector:
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(p),))
    return field_.velocity_dual(DualVector.seed(np.c_[p, tt]))


def _diag(tan: Tensor) -> Tensor:
    """sum_i d u_i / d x_i from tangents (N, 4, 3)."""
    return tan[:, 0, 0] + tan[:, 1, 1] + tan[:, 2, 2]


def ns_residual_tensor(field_: Field, points, t) -> Tensor:
    u = _query(field_, points, t)
    tan = u.tangent                                  # (N, 4, 3): [n, j, i] = du_i/dx_j
    du_dt = tan[:, 3, :]
    conv = T.tsum(T.reshape(u.primal, (-1, 3, 1)) * tan[:, 0:3, :], axis=1)
    return du_dt + conv - T.reshape(field_.external_force(), (1, 3))


def divergence_tensor(field_: Field, points, t) -> Tensor:
    return _diag(_query(field_, points, t).tangent)


def ns_residual(field_: Field, points, t) -> np.ndarray:
    """du/dt + (u . grad) u - f_g at each query, from exact input-Jacobians."""
    r = ns_residual_tensor(field_, points, t).data
    return r[0] if np.ndim(points) == 1 else r


def divergence(field_: Field, points, t) -> np.ndarray:
    d = divergence_tensor(field_, points, t).data
    return float(d[0]) if np.ndim(points) == 1 else d


# -- losses ----------------------------------------------------------------------

def _require(n: int, what: str):
    if n < 1:
        raise ValueError(f"{what} requires at least one probe")


def loss_ns(field_: Field, points, t) -> Tensor:
    _require(len(np.atleast_2d(points)), "loss_ns")
    r = ns_residual_tensor(field_, points, t)
    return T.mean(T.tsum(T.square(r), axis=1))


def loss_div(field_: Field, points, t) -> Tensor:
    _require(len(np.atleast_2d(points)), "loss_div")
    return T.mean(T.square(divergence_tensor(field_, points, t)))


def ns_div_losses(field_: Field, points, t) -> tuple[Tensor, Tensor]:
    """(L_NS, L_div) from one shared Jacobian evaluation of the probes."""
    _require(len(np.atleast_2d(points)), "ns_div_losses")
    u = _query(field_, points, t)
    tan = u.tangent
    conv = T.tsum(T.reshape(u.primal, (-1, 3, 1)) * tan[:, 0:3, :], axis=1)
    r = tan[:, 3, :] + conv - T.reshape(field_.external_force(), (1, 3))
    return T.mean(T.tsum(T.square(r), axis=1)), T.mean(T.square(_diag(tan)))


def loss_boundary(field_: Field, probes: BoundaryProbe, region: Region, dt: float) -> Tensor:
    """Mean over eligible probes of w(p + dt u) * |u|^2.

    Probes whose ground-truth motion leaves the fluid are not eligible.
    """
    keep = np.asarray(probes.stays_inside_gt, dtype=bool)
    if not keep.any():
        return Tensor(0.0)
    p = probes.position[keep]
    u = field_.velocity_dual(DualVector(np.c_[p, probes.t[keep]], None)).primal
    w = w_indicator(p + dt * u.data, region)
    return T.mean(Tensor(w) * T.tsum(T.square(u), axis=1))


def loss_motion(field_: Field, samples: SceneFlowSample) -> Tensor:
    """Mean end-point error |u - u_gt|_2 (not squared)."""
    _require(len(samples), "loss_motion")
    u = field_.velocity_dual(DualVector(np.c_[samples.position, samples.t], None)).primal
    err = T.tsum(T.square(u - Tensor(samples.u_gt)), axis=1)
    nz = err.data > 0
    # |0| has subgradient 0; keep sqrt away from its singular derivative there
    norm = T.where(nz, T.sqrt(T.where(nz, err, 1.0)), 0.0)
    return T.mean(norm)


def loss_physics(l_ns, l_div, l_b, weights: LossWeights):
    """lambda_NS L_NS + lambda_div L_div + L_b (works on floats or tensors)."""
    return l_ns * weights.ns + l_div * weights.div + l_b
