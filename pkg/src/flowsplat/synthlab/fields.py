"""Closed-form velocity fields usable wherever a learned field is (exact duals)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffengine import DualVector, Tensor, concat, constant, no_grad


class DomainError(ValueError):
    """Query lies outside the analytic field's domain (e.g. inside the obstacle)."""


class AnalyticField:
    force = (0.0, 0.0, 0.0)

    def velocity_dual(self, X: DualVector) -> DualVector:
        raise NotImplementedError

    def velocity(self, points, t=0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(p),))
        with no_grad():
            return self.velocity_dual(constant(np.c_[p, tt])).primal.data

    def external_force(self) -> Tensor:
        return Tensor(np.asarray(self.force, dtype=np.float64))

    def to_dict(self) -> dict:
        raise NotImplementedError


def _zeros_like_col(X: DualVector) -> DualVector:
    return X.column(0) * 0.0


@dataclass
class ChannelFlow(AnalyticField):
    """Parabolic bank profile along +x, plus optional uniform along-stream drift accel."""

    speed: float = 1.0
    half_width: float = 5.0
    y_center: float = 0.0
    drift: float = 0.0

    @property
    def force(self):
        return (self.drift, 0.0, 0.0)

    def profile(self, y):
        s = (np.asarray(y) - self.y_center) / self.half_width
        return np.maximum(1.0 - s * s, 0.0)

    def velocity_dual(self, X):
        s = (X.column(1) - self.y_center) * (1.0 / self.half_width)
        ux = (1.0 - s * s).maximum(0.0) * self.speed + X.column(3) * self.drift
        zero = _zeros_like_col(X)
        return concat([ux, zero, zero])

    def to_dict(self):
        return {"kind": "channel", "speed": self.speed, "half_width": self.half_width,
                "y_center": self.y_center, "drift": self.drift}


def potential_flow_cylinder(speed: float, radius: float, p, center=(0.0, 0.0)) -> np.ndarray:
    """Inviscid flow past a disk: u_x = U(1 - R^2(x^2-y^2)/r^4), u_y = -2UR^2xy/r^4."""
    single = np.ndim(p) == 1
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    x = p[:, 0] - center[0]
    y = p[:, 1] - center[1]
    r2 = x * x + y * y
    if np.any(r2 < radius * radius * (1 - 1e-12)):
        raise DomainError("query inside the obstacle")
    r4 = r2 * r2
    ux = speed * (1.0 - radius**2 * (x * x - y * y) / r4)
    uy = -2.0 * speed * radius**2 * x * y / r4
    out = np.stack([ux, uy, np.zeros_like(ux)], 1)
    return out[0] if single else out


@dataclass
class CylinderFlow(AnalyticField):
    speed: float = 1.0
    radius: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def velocity_dual(self, X):
        x = X.column(0) - self.cx
        y = X.column(1) - self.cy
        r2 = x * x + y * y
        inside = r2.primal.data < self.radius**2
        # interior (obstacle) is static; keep the formula away from r = 0 there
        r2 = r2.maximum(0.0) + Tensor(np.where(inside, 1.0, 0.0))
        inv4 = (r2 * r2).reciprocal()
        k = self.radius**2
        ux = (1.0 - (x * x - y * y) * inv4 * k) * self.speed
        uy = x * y * inv4 * (-2.0 * self.speed * k)
        keep = Tensor(np.where(inside, 0.0, 1.0))
        zero = _zeros_like_col(X)
        return concat([ux * keep, uy * keep, zero])

    def to_dict(self):
        return {"kind": "cylinder", "speed": self.speed, "radius": self.radius,
                "cx": self.cx, "cy": self.cy}


@dataclass
class RigidRotation(AnalyticField):
    omega: float = 1.0

    def velocity_dual(self, X):
        return concat([X.column(1) * -self.omega, X.column(0) * self.omega, _zeros_like_col(X)])

    def to_dict(self):
        return {"kind": "rotation", "omega": self.omega}


@dataclass
class UniformAcceleration(AnalyticField):
    """u = u0 + f_g t, an exact solution of the simplified momentum equation."""

    accel: tuple = (0.0, 0.0, -1.0)
    u0: tuple = (0.0, 0.0, 0.0)

    @property
    def force(self):
        return tuple(self.accel)

    def velocity_dual(self, X):
        t = X.column(3)
        return concat([t * a + u for a, u in zip(self.accel, self.u0)])

    def to_dict(self):
        return {"kind": "accel", "accel": list(self.accel), "u0": list(self.u0)}


@dataclass
class ConstantField(AnalyticField):
    value: tuple = (1.0, 0.0, 0.0)

    def velocity_dual(self, X):
        z = _zeros_like_col(X)
        return concat([z + v for v in self.value])

    def to_dict(self):
        return {"kind": "constant", "value": list(self.value)}


class NegatedField:
    """-u at the same query; used for backward (time-reversed) advection."""

    def __init__(self, base):
        self.base = base

    def velocity(self, points, t, **kw):
        return -self.base.velocity(points, t, **kw)


def field_from_dict(d: dict) -> AnalyticField:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"channel": ChannelFlow, "cylinder": CylinderFlow, "rotation": RigidRotation,
           "accel": UniformAcceleration, "constant": ConstantField}[kind]
    for k in ("accel", "u0", "value"):
        if k in d:
            d[k] = tuple(d[k])
    return cls(**d)
