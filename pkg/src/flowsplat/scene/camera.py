"""Pinhole cameras (OpenCV convention: +z forward, +y down) and trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation


class ProjectionError(ValueError):
    """Point lies on or behind the camera plane."""


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(R) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(np.asarray(R)).as_quat()
    return np.array([w, x, y, z])


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))   # world -> camera
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None) -> "Camera":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
        return cls(fx, fy, cx, cy, width, height, R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def project(self, points, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """World points (N, 3) -> pixel coords (N, 2) and camera depth (N,)."""
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        if strict and np.any(z <= 0):
            raise ProjectionError("point behind camera")
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], 1)
        return uv, z

    def lift(self, uv, depth) -> np.ndarray:
        """Pixel coords (N, 2) at camera depth (N,) -> world points (N, 3)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        d = np.broadcast_to(np.asarray(depth, dtype=np.float64), uv.shape[:1])
        if np.any(d <= 0):
            raise ValueError("depth must be positive")
        pc = np.stack([(uv[:, 0] - self.cx) / self.fx * d, (uv[:, 1] - self.cy) / self.fy * d, d], 1)
        return (pc - self.t) @ self.R

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-depth ray directions (H*W, 3) in world frame and the camera center."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        d = np.stack([(u.ravel() - self.cx) / self.fx, (v.ravel() - self.cy) / self.fy,
                      np.ones(u.size)], 1)
        return d @ self.R, self.center

    def translated(self, offset) -> "Camera":
        """Same intrinsics/orientation, camera center moved by ``offset``."""
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                      self.R.copy(), self.t - self.R @ np.asarray(offset, dtype=np.float64))

    def to_dict(self, exact: bool = False) -> dict:
        """Quaternion (w, x, y, z) + translation; ``exact`` also stores the matrix bits."""
        d = {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
             "width": self.width, "height": self.height,
             "rotation": matrix_to_quat(self.R).tolist(), "translation": self.t.tolist()}
        if exact:
            d["matrix"] = self.R.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        R = np.asarray(d["matrix"]) if "matrix" in d else quat_to_matrix(d["rotation"])
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), R,
                   np.asarray(d["translation"], dtype=np.float64))


@dataclass
class CameraTrajectory:
    frames: list[int]
    cameras: list[Camera]

    def __post_init__(self):
        if len(self.frames) != len(self.cameras):
            raise ValueError("frame/camera count mismatch")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise ValueError("trajectory frame indices must be strictly increasing")

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(zip(self.frames, self.cameras))

    @classmethod
    def static(cls, camera: Camera, n: int) -> "CameraTrajectory":
        return cls(list(range(n)), [camera] * n)

    @classmethod
    def dolly(cls, camera: Camera, n: int, step) -> "CameraTrajectory":
        """Camera translated by ``i * step`` (world units) at frame ``i``."""
        step = np.asarray(step, dtype=np.float64)
        return cls(list(range(n)), [camera.translated(i * step) for i in range(n)])

    def to_list(self) -> list[dict]:
        return [{"frame": f, **c.to_dict()} for f, c in self]

    @classmethod
    def from_list(cls, items: list[dict]) -> "CameraTrajectory":
        return cls([int(d["frame"]) for d in items], [Camera.from_dict(d) for d in items])
