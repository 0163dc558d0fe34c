"""Scene bundle directories: the single input path for synthetic and user scenes.

Layout::

    image.png      8-bit RGB
    depth.bin      b"DPTH", uint32 width, uint32 height, float32 LE row-major
    mask.png       8-bit, nonzero = fluid
    obstacle.png   optional 8-bit, nonzero = obstacle
    camera.yaml    input camera and per-frame trajectory (quaternion w,x,y,z + translation)
    scene.json     optional metadata (analytic field, region, fps, frame count)
    flow.npz       optional scene-flow samples (position, t, u_gt)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .camera import Camera, CameraTrajectory

DEPTH_MAGIC = b"DPTH"


class BundleError(ValueError):
    pass


def save_png(path, img: np.ndarray) -> None:
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def load_png(path) -> np.ndarray:
    """8-bit image as float64 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def write_depth(path, depth: np.ndarray) -> None:
    d = np.asarray(depth)
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(d, dtype="<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DEPTH_MAGIC or len(raw) < 12:
        raise BundleError(f"{path}: not a depth grid")
    w, h = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * w * h:
        raise BundleError(f"{path}: size does not match {w}x{h} header")
    return np.frombuffer(raw[12:], dtype="<f4").reshape(h, w).astype(np.float64)


@dataclass
class SceneBundle:
    image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    camera: Camera
    trajectory: CameraTrajectory
    obstacle: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    flow: dict | None = None

    def __post_init__(self):
        h, w = self.depth.shape
        if self.image.shape[:2] != (h, w) or self.mask.shape != (h, w):
            raise BundleError("image, depth and mask dims differ")
        if (self.camera.height, self.camera.width) != (h, w):
            raise BundleError("camera dims differ from image dims")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth <= 0):
            raise BundleError("depth must be finite and positive")


def write_bundle(bundle: SceneBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "image.png", bundle.image)
    write_depth(out / "depth.bin", bundle.depth)
    save_png(out / "mask.png", bundle.mask.astype(np.uint8) * 255)
    if bundle.obstacle is not None:
        save_png(out / "obstacle.png", bundle.obstacle.astype(np.uint8) * 255)
    cams = {"camera": bundle.camera.to_dict(), "trajectory": bundle.trajectory.to_list()}
    (out / "camera.yaml").write_text(yaml.safe_dump(cams, sort_keys=False))
    if bundle.meta:
        (out / "scene.json").write_text(json.dumps(bundle.meta, indent=1))
    if bundle.flow is not None:
        np.savez(out / "flow.npz", **bundle.flow)
    return out


def read_bundle(path) -> SceneBundle:
    p = Path(path)
    for name in ("image.png", "depth.bin", "mask.png", "camera.yaml"):
        if not (p / name).exists():
            raise BundleError(f"bundle {p} is missing {name}")
    image = load_png(p / "image.png")
    if image.ndim != 3 or image.shape[2] < 3:
        raise BundleError("image.png must be RGB")
    mask = load_png(p / "mask.png")
    mask = (mask if mask.ndim == 2 else mask[..., 0]) > 0
    obstacle = None
    if (p / "obstacle.png").exists():
        ob = load_png(p / "obstacle.png")
        obstacle = (ob if ob.ndim == 2 else ob[..., 0]) > 0
    cams = yaml.safe_load((p / "camera.yaml").read_text())
    camera = Camera.from_dict(cams["camera"])
    traj_items = cams.get("trajectory") or [{"frame": 0, **cams["camera"]}]
    meta = json.loads((p / "scene.json").read_text()) if (p / "scene.json").exists() else {}
    flow = None
    if (p / "flow.npz").exists():
        with np.load(p / "flow.npz") as z:
            flow = {k: z[k] for k in z.files}
    return SceneBundle(image[..., :3], read_depth(p / "depth.bin"), mask, camera,
                       CameraTrajectory.from_list(traj_items), obstacle, meta, flow)
