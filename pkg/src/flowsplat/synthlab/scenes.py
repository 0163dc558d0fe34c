"""Synthetic river scenes: a textured ground plane seen from an elevated camera.

World frame: x runs downstream, y across the channel, z up; the water surface and
the banks lie on the plane z = 0.  Every pixel ray hits the plane, so depth is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import distance_transform_edt

from ..physics import BoundaryProbe, SceneFlowSample
from ..renderer import rasterize
from ..scene.bundle import SceneBundle
from ..scene.camera import Camera, CameraTrajectory
from ..scene.gaussians import GaussianScene, gaussians_from_image
from .fields import AnalyticField, ChannelFlow, CylinderFlow, DomainError, field_from_dict

EYE = (0.0, -8.43, 7.66)
TARGET = (0.0, -2.0, 0.0)
WATER_PERIOD = 3.0
REFERENCE_WIDTH = 256


@dataclass
class GeometricRegion:
    """Channel |y - y_center| <= half_width on z = 0, minus obstacle disks (cx, cy, r)."""

    half_width: float = 5.0
    y_center: float = 0.0
    disks: tuple = ()

    def in_disk(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        hit = np.zeros(len(p), dtype=bool)
        for cx, cy, r in self.disks:
            hit |= (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 < r * r
        return hit

    def in_channel(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.abs(p[:, 1] - self.y_center) <= self.half_width

    def inside(self, points) -> np.ndarray:
        return self.in_channel(points) & ~self.in_disk(points)

    def outside(self, points) -> np.ndarray:
        return ~self.inside(points)

    def boundary_distance(self, points) -> np.ndarray:
        """Distance to the nearest bank or disk edge (positive on either side)."""
        p = np.atleast_2d(points)
        d = np.abs(self.half_width - np.abs(p[:, 1] - self.y_center))
        for cx, cy, r in self.disks:
            d = np.minimum(d, np.abs(np.hypot(p[:, 0] - cx, p[:, 1] - cy) - r))
        return d

    def with_disk(self, disk) -> "GeometricRegion":
        return replace(self, disks=tuple(self.disks) + (tuple(float(v) for v in disk),))

    def to_dict(self) -> dict:
        return {"half_width": self.half_width, "y_center": self.y_center,
                "disks": [list(d) for d in self.disks]}

    @classmethod
    def from_dict(cls, d: dict) -> "GeometricRegion":
        return cls(float(d["half_width"]), float(d["y_center"]),
                   tuple(tuple(float(v) for v in disk) for disk in d["disks"]))


@dataclass
class Texture:
    """Smooth procedural colors; the water pattern is periodic in x with ``period``."""

    seed: int = 0
    period: float = WATER_PERIOD

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self._wk = rng.integers(1, 3, size=(4,))           # harmonics of the period
        self._wy = rng.uniform(-0.5, 0.5, size=(4,))
        self._wph = rng.uniform(0, 2 * np.pi, size=(4,))
        self._wamp = rng.uniform(0.4, 1.0, size=(4, 3)) * np.array([0.05, 0.08, 0.1])
        self._bph = rng.uniform(0, 2 * np.pi, size=(2,))

    def water(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        col = np.tile([0.15, 0.35, 0.6], (len(p), 1))
        for k, wy, ph, amp in zip(self._wk, self._wy, self._wph, self._wamp):
            col = col + amp * np.sin(2 * np.pi * k * p[:, :1] / self.period + wy * p[:, 1:2] + ph)
        return col

    def bank(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        s = 0.5 + 0.5 * np.sin(0.6 * p[:, :1] + self._bph[0]) * np.cos(0.5 * p[:, 1:2] + self._bph[1])
        return np.array([0.35, 0.45, 0.2]) + s * np.array([0.15, 0.1, 0.05])

    def rock(self, p, disk) -> np.ndarray:
        p = np.atleast_2d(p)
        cx, cy, r = disk
        q = np.clip(1.0 - ((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2) / r**2, 0.0, 1.0)
        return np.array([0.4, 0.38, 0.36]) + np.sqrt(q)[:, None] * 0.2

    def colors(self, p, region: GeometricRegion) -> np.ndarray:
        p = np.atleast_2d(p)
        out = np.where(region.in_channel(p)[:, None], self.water(p), self.bank(p))
        for disk in region.disks:
            hit = (p[:, 0] - disk[0]) ** 2 + (p[:, 1] - disk[1]) ** 2 < disk[2] ** 2
            out[hit] = self.rock(p[hit], disk)
        return np.clip(out, 0.0, 1.0)


@dataclass
class SyntheticScene:
    kind: str
    field: AnalyticField
    region: GeometricRegion
    camera: Camera
    texture: Texture
    fps: float = 10.0
    n_frames: int = 30
    surface: np.ndarray = field(init=False, repr=False)   # (H, W, 3) world points
    depth: np.ndarray = field(init=False, repr=False)
    image: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)
    obstacle: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cam = self.camera
        rays, origin = cam.pixel_rays()
        if np.any(rays[:, 2] >= 0):
            raise ValueError("every pixel ray must hit the ground plane")
        s = -origin[2] / rays[:, 2]
        pts = origin + s[:, None] * rays
        pts[:, 2] = 0.0
        h, w = cam.height, cam.width
        self.surface = pts.reshape(h, w, 3)
        self.depth = s.reshape(h, w)          # ray directions have unit camera-z
        self.mask = self.region.inside(pts).reshape(h, w)
        self.obstacle = self.region.in_disk(pts).reshape(h, w)
        self.image = self.texture.colors(pts, self.region).reshape(h, w, 3)

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def horizon(self) -> float:
        return self.n_frames / self.fps

    def surface_point(self, uv) -> np.ndarray:
        """Ground-plane point seen at continuous pixel coords (u, v)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        d = np.c_[(uv[:, 0] - self.camera.cx) / self.camera.fx,
                  (uv[:, 1] - self.camera.cy) / self.camera.fy, np.ones(len(uv))] @ self.camera.R
        o = self.camera.center
        p = o + (-o[2] / d[:, 2])[:, None] * d
        p[:, 2] = 0.0
        return p

    def gaussians(self, payload=None) -> GaussianScene:
        return gaussians_from_image(self.image, self.depth, self.mask, self.camera, payload=payload)

    def trajectory(self, dolly=None) -> CameraTrajectory:
        if dolly is None:
            return CameraTrajectory.static(self.camera, self.n_frames)
        return CameraTrajectory.dolly(self.camera, self.n_frames, dolly)

    def meta(self) -> dict:
        return {"kind": self.kind, "field": self.field.to_dict(), "region": self.region.to_dict(),
                "texture_seed": self.texture.seed, "texture_period": self.texture.period,
                "fps": self.fps, "n_frames": self.n_frames}

    @classmethod
    def from_meta(cls, meta: dict, camera: Camera) -> "SyntheticScene":
        return cls(meta["kind"], field_from_dict(meta["field"]),
                   GeometricRegion.from_dict(meta["region"]), camera,
                   Texture(int(meta["texture_seed"]), float(meta["texture_period"])),
                   float(meta["fps"]), int(meta["n_frames"]))


def default_camera(size: int = 256) -> Camera:
    return Camera.look_at(EYE, TARGET, (0.0, 0.0, 1.0), float(size), float(size), size, size)


def make_scene(kind: str = "channel", size: int = 256, speed: float = 1.0, rock=(0.0, 0.0, 1.2),
               drift: float = 0.3, seed: int = 0, fps: float = 10.0, n_frames: int = 30,
               half_width: float = 5.0) -> SyntheticScene:
    """``kind``: 'channel' (no rock), 'rock' (cylinder flow around a disk) or 'drift'."""
    region = GeometricRegion(half_width)
    if kind == "channel":
        fld = ChannelFlow(speed, half_width)
    elif kind == "drift":
        fld = ChannelFlow(speed, half_width, drift=drift)
    elif kind == "rock":
        region = region.with_disk(rock)
        fld = CylinderFlow(speed, rock[2], rock[0], rock[1])
    else:
        raise ValueError(f"unknown scene kind {kind!r}")
    return SyntheticScene(kind, fld, region, default_camera(size), Texture(seed), fps, n_frames)


def edit_scene_add_obstacle(scene: SyntheticScene, disk) -> SyntheticScene:
    """Drop a rock (cx, cy, r) into the channel; the flow becomes potential flow around it."""
    cx, cy, r = (float(v) for v in disk)
    reg = scene.region
    if r <= 0 or abs(cy - reg.y_center) + r > reg.half_width:
        raise DomainError("obstacle disk must lie inside the channel")
    speed = getattr(scene.field, "speed", 1.0)
    return SyntheticScene("edited", CylinderFlow(speed, r, cx, cy), reg.with_disk((cx, cy, r)),
                          scene.camera, scene.texture, scene.fps, scene.n_frames)


# -- sampling --------------------------------------------------------------------

def _fluid_points(scene: SyntheticScene, n: int, rng, pixels=None) -> np.ndarray:
    """Uniform points over fluid pixels (jittered within each pixel), strictly in the fluid."""
    rows, cols = np.nonzero(scene.mask if pixels is None else pixels)
    if len(rows) == 0:
        raise ValueError("scene has no fluid pixels")
    out = np.zeros((0, 3))
    while len(out) < n:
        k = rng.integers(0, len(rows), size=2 * (n - len(out)) + 8)
        uv = np.c_[cols[k], rows[k]] + rng.uniform(-0.5, 0.5, size=(len(k), 2))
        p = scene.surface_point(uv)
        out = np.concatenate([out, p[scene.region.inside(p)]])
    return out[:n]


def _times(scene, n, times, rng):
    if times is None:
        return rng.uniform(0.0, scene.horizon, size=n)
    times = np.asarray(times, dtype=np.float64)
    return times[rng.integers(0, len(times), size=n)]


def sample_scene_flow(scene: SyntheticScene, n: int, times=None, seed: int = 0,
                      noise: float = 0.0) -> SceneFlowSample:
    """Surface points uniform over the fluid mask with oracle velocities."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    p = _fluid_points(scene, n, rng)
    t = _times(scene, n, times, rng)
    u = scene.field.velocity(p, t)
    if noise > 0:
        u = u + rng.normal(0.0, noise, size=u.shape) * np.array([1.0, 1.0, 0.0])
    return SceneFlowSample(p, t, u)


def sample_physics_probes(scene: SyntheticScene, n: int, seed: int = 0):
    """(points, times): fluid surface points and uniform times in [0, T]."""
    rng = np.random.default_rng(seed)
    return _fluid_points(scene, n, rng), rng.uniform(0.0, scene.horizon, size=n)


def boundary_band(mask: np.ndarray, band_px: float = 2.0) -> np.ndarray:
    """Fluid pixels within ``band_px`` pixels of a non-fluid pixel."""
    return mask & (distance_transform_edt(mask) <= band_px)


def sample_boundary_probes(scene: SyntheticScene, n: int, seed: int = 0, band_px: float = 2.0,
                           assume_inside: bool = False,
                           reference_width: int | None = REFERENCE_WIDTH) -> BoundaryProbe:
    """Probes in the fluid within ``band_px`` pixels of the fluid boundary.

    With ``reference_width`` set, pixels are measured at that image width, so the band has
    the same world-unit width at every render size; ``None`` measures pixels of this image.
    """
    rng = np.random.default_rng(seed)
    if reference_width is None:
        p = _fluid_points(scene, n, rng, pixels=boundary_band(scene.mask, band_px))
    else:
        p = _band_points(scene, n, rng, band_px * scene.camera.width / reference_width)
    t = rng.uniform(0.0, scene.horizon, size=n)
    if assume_inside:
        stays = np.ones(n, dtype=bool)
    else:
        stays = scene.region.inside(p + scene.dt * scene.field.velocity(p, t))
    return BoundaryProbe(p, t, stays)


def _band_points(scene: SyntheticScene, n: int, rng, band: float) -> np.ndarray:
    """Fluid points whose distance to the region boundary is at most ``band`` local pixels."""
    rows, cols = np.nonzero(boundary_band(scene.mask, np.ceil(band) + 1.0))
    if len(rows) == 0:
        raise ValueError("scene has no fluid pixels")
    out = np.zeros((0, 3))
    while len(out) < n:
        k = rng.integers(0, len(rows), size=4 * (n - len(out)) + 8)
        uv = np.c_[cols[k], rows[k]] + rng.uniform(-0.5, 0.5, size=(len(k), 2))
        p = scene.surface_point(uv)
        pitch = np.linalg.norm(scene.surface_point(uv + [1.0, 0.0]) - p, axis=1)
        keep = scene.region.inside(p) & (scene.region.boundary_distance(p) <= band * pitch)
        out = np.concatenate([out, p[keep]])
    return out[:n]


# -- ground truth ------------------------------------------------------------------

def integrate(fld, points, t0: float, t1: float, max_step: float = 0.05) -> np.ndarray:
    """RK4 integration of dx/ds = u(x, s) from s = t0 to s = t1 (either direction)."""
    x = np.array(points, dtype=np.float64, copy=True)
    if t1 == t0 or len(x) == 0:
        return x
    n = int(np.ceil(abs(t1 - t0) / max_step))
    h = (t1 - t0) / n
    s = t0
    for _ in range(n):
        k1 = fld.velocity(x, s)
        k2 = fld.velocity(x + 0.5 * h * k1, s + 0.5 * h)
        k3 = fld.velocity(x + 0.5 * h * k2, s + 0.5 * h)
        k4 = fld.velocity(x + h * k3, s + h)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        x[:, 2] = 0.0
        s += h
    return x


def ground_truth_payload(scene: SyntheticScene, gs: GaussianScene, t: float) -> np.ndarray:
    """Colors carried to each kernel's (fixed) location at time ``t`` by the true flow."""
    pay = gs.payload.copy()
    f = gs.fluid
    origin = integrate(scene.field, gs.centers[f], t, 0.0)
    pay[f] = np.clip(scene.texture.water(origin), 0.0, 1.0)
    return pay


def render_ground_truth(scene: SyntheticScene, trajectory: CameraTrajectory | None = None,
                        background=None) -> list[np.ndarray]:
    """Reference frames: the texture transported by the analytic flow, splatted per camera.

    Kernels stay on the input-view pixel lifts; each fluid kernel takes the color found
    at its back-traced origin (an Eulerian view of the same advection).
    """
    trajectory = scene.trajectory() if trajectory is None else trajectory
    gs = scene.gaussians()
    frames = []
    for i, cam in trajectory:
        g = replace(gs, payload=ground_truth_payload(scene, gs, i * scene.dt))
        frames.append(rasterize(g, cam, background).color)
    return frames


# -- bundles -----------------------------------------------------------------------

def scene_to_bundle(scene: SyntheticScene, trajectory: CameraTrajectory | None = None,
                    flow: SceneFlowSample | None = None) -> SceneBundle:
    fl = None if flow is None else {"position": flow.position, "t": flow.t, "u_gt": flow.u_gt}
    return SceneBundle(scene.image, scene.depth, scene.mask, scene.camera,
                       scene.trajectory() if trajectory is None else trajectory,
                       scene.obstacle, scene.meta(), fl)


def scene_from_bundle(bundle: SceneBundle) -> SyntheticScene:
    """Rebuild the analytic scene recorded in a bundle's metadata."""
    if "field" not in bundle.meta:
        raise ValueError("bundle carries no analytic scene metadata")
    return SyntheticScene.from_meta(bundle.meta, bundle.camera)
