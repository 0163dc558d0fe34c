"""Advecting Gaussian kernels through a velocity field and rendering looping videos."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .diffengine import NumericFailure
from .renderer import Decoder, decode_features, rasterize
from .scene.camera import CameraTrajectory
from .scene.gaussians import GaussianScene


class FrameError(RuntimeError):
    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame
        self.cause = cause


@dataclass
class AnimationConfig:
    n_frames: int = 30
    fps: float = 10.0
    symmetric_splatting: bool = True
    loop_period: int | None = None      # frames; defaults to n_frames
    feature_sampling: str = "current"   # Z sampled at advected ("current") or "initial" centers

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.loop_period is None:
            self.loop_period = self.n_frames
        if self.loop_period < 1:
            raise ValueError("loop_period must be at least 1")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def horizon(self) -> float:
        return self.loop_period * self.dt


def _velocity(field, points, t, feature_points=None):
    if feature_points is None:
        u = field.velocity(points, t)
    else:
        u = field.velocity(points, t, feature_points=feature_points)
    if not np.all(np.isfinite(u)):
        raise NumericFailure("advect")
    return u


def advect_points(field, points, t: float, dt: float, feature_points=None) -> np.ndarray:
    """One explicit Euler step x + dt u(x, t)."""
    if len(points) == 0:
        return np.array(points, dtype=np.float64)
    return points + dt * _velocity(field, points, t, feature_points)


def advect_step(scene: GaussianScene, field, t: float, dt: float,
                feature_points=None) -> GaussianScene:
    """Move fluid kernels by dt * u(center, t); every other attribute is shared unchanged."""
    centers = scene.centers.copy()
    f = scene.fluid
    fp = None if feature_points is None else np.asarray(feature_points)[f]
    centers[f] = advect_points(field, scene.centers[f], t, dt, fp)
    return scene.with_centers(centers)


def euler_path(field, points, t0: float, dt: float, steps: int, sign: float = 1.0,
               feature_points=None) -> list[np.ndarray]:
    """Positions after 0..steps Euler steps; ``sign=-1`` walks backward in time from t0."""
    out = [np.array(points, dtype=np.float64)]
    x = out[0]
    fp = feature_points
    for k in range(steps):
        t = t0 + sign * k * dt
        x = x + sign * dt * _velocity(field, x, t, fp)
        out.append(x)
    return out


class _LazyPath:
    """Euler positions computed on demand, so a failing step surfaces at the frame using it."""

    def __init__(self, field, points, t0, dt, sign, feature_points):
        self.field, self.t0, self.dt, self.sign, self.fp = field, t0, dt, sign, feature_points
        self.pos = [np.array(points, dtype=np.float64)]

    def __getitem__(self, i: int) -> np.ndarray:
        while len(self.pos) <= i:
            k = len(self.pos) - 1
            t = self.t0 + self.sign * k * self.dt
            self.pos.append(self.pos[-1] + self.sign * self.dt * _velocity(self.field, self.pos[-1], t, self.fp))
        return self.pos[i]


def _blend(G0: GaussianScene, fwd: np.ndarray, bwd: np.ndarray, w_fwd: float) -> GaussianScene:
    """Forward copy keeps G0's kernel order (depth ties composite identically); the
    backward fluid copy is appended.  A zero-weight copy is dropped entirely."""
    f = G0.fluid

    def moved(pos, w):
        c = G0.centers.copy()
        c[f] = pos
        op = G0.opacities.copy()
        op[f] *= w
        return replace(G0, centers=c, opacities=op)

    if w_fwd >= 1:
        return moved(fwd, 1.0)
    if w_fwd <= 0:
        return moved(bwd, 1.0)
    back = moved(bwd, 1.0 - w_fwd).subset(f)
    return GaussianScene.concat([moved(fwd, w_fwd), back])


def symmetric_weights(t: float, T: float) -> tuple[float, float]:
    if not 0 <= t <= T:
        raise ValueError("t must lie in [0, T]")
    return (T - t) / T, t / T


def symmetric_splat(G0: GaussianScene, field, t: float, T: float, dt: float,
                    feature_sampling: str = "current") -> GaussianScene:
    """Forward copy advected over [0, t] blended with a copy run back from T to t.

    Weights are (T - t)/T and t/T; the backward copy uses -u at the mirrored time,
    so the loop closes at t = T where it coincides with G0.
    """
    w_fwd, _ = symmetric_weights(t, T)
    f = G0.fluid
    p0 = G0.centers[f]
    fp = p0 if feature_sampling == "initial" else None
    n_f = int(round(t / dt))
    n_b = int(round((T - t) / dt))
    fwd = euler_path(field, p0, 0.0, dt, n_f, 1.0, fp)[-1] if w_fwd > 0 else None
    bwd = euler_path(field, p0, T, dt, n_b, -1.0, fp)[-1] if w_fwd < 1 else None
    return _blend(G0, fwd, bwd, w_fwd)


def render_video(G0: GaussianScene, field, trajectory: CameraTrajectory, config: AnimationConfig,
                 decoder: Decoder | None = None, background=None) -> list[np.ndarray]:
    """One RGB frame per trajectory camera; frame k shows time k * dt."""
    if len(trajectory) != config.n_frames:
        raise ValueError("trajectory length must equal the frame count")
    if decoder is None:
        decoder = Decoder.passthrough()
    T, dt, n = config.horizon, config.dt, config.loop_period
    f = G0.fluid
    p0 = G0.centers[f]
    fp = p0 if config.feature_sampling == "initial" else None
    fwd = _LazyPath(field, p0, 0.0, dt, 1.0, fp)
    bwd = _LazyPath(field, p0, T, dt, -1.0, fp)
    frames = []
    for k, (_, cam) in enumerate(trajectory):
        try:
            j = k % n
            if config.symmetric_splatting:
                w = (n - j) / n
                g = _blend(G0, fwd[j], bwd[n - j] if j else None, w)
            else:
                c = G0.centers.copy()
                c[f] = fwd[j]
                g = G0.with_centers(c)
            fb = rasterize(g, cam, background)
            frames.append(np.clip(decode_features(fb, decoder), 0.0, 1.0))
        except Exception as exc:  # report which frame broke
            raise FrameError(k, exc) from exc
    return frames


def write_frames(frames, out_dir, fps: float, trajectory: CameraTrajectory | None = None) -> Path:
    """frame_%05d.png plus manifest.json (frame count, fps, per-frame cameras)."""
    from .scene.bundle import save_png

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, fr in enumerate(frames):
        name = f"frame_{i:05d}.png"
        save_png(out / name, fr)
        names.append(name)
    manifest = {"n_frames": len(frames), "fps": fps, "frames": names,
                "cameras": trajectory.to_list() if trajectory is not None else None}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out / "manifest.json"
