"""Glue from scene bundles to training examples, kernel scenes and evaluation."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .animation import AnimationConfig, render_video
from .metrics import EvalReport, boundary_violation_rate, frame_metrics, mean_abs_divergence, \
    velocity_l1
from .physics import BoundaryProbe, MaskRegion, SceneFlowSample
from .scene.bundle import SceneBundle, load_png
from .scene.gaussians import GaussianScene, gaussians_from_image
from .training import DynamicsExample, example_from_scene, feature_scene


def oracle_scene(bundle: SceneBundle):
    """The analytic scene behind a synthetic bundle, or None for user scenes."""
    if "field" not in bundle.meta:
        return None
    from .synthlab.scenes import scene_from_bundle

    return scene_from_bundle(bundle)


def bundle_flow(bundle: SceneBundle) -> SceneFlowSample | None:
    if bundle.flow is None:
        return None
    f = bundle.flow
    return SceneFlowSample(np.asarray(f["position"]), np.asarray(f["t"]), np.asarray(f["u_gt"]))


def _pixel_lifts(bundle: SceneBundle, pixels: np.ndarray, n: int, rng) -> np.ndarray:
    rows, cols = np.nonzero(pixels)
    if len(rows) == 0:
        raise ValueError("no pixels to sample probes from")
    k = rng.integers(0, len(rows), size=n)
    uv = np.c_[cols[k], rows[k]].astype(np.float64)
    return bundle.camera.lift(uv, bundle.depth[rows[k], cols[k]])


def example_from_bundle(bundle: SceneBundle, n_flow: int = 4096, n_probe: int = 4096,
                        n_boundary: int = 2048, seed: int = 0) -> DynamicsExample:
    """Training example from a bundle; synthetic bundles get exact geometry and probes.

    Conditioning always uses the bundle's stored image, depth and mask.
    """
    scene = oracle_scene(bundle)
    flow = bundle_flow(bundle)
    fps = float(bundle.meta.get("fps", 10.0))
    if scene is not None:
        ex = example_from_scene(scene, n_flow, n_probe, n_boundary, seed, flow=flow,
                                assume_inside=bool(bundle.meta.get("edited", False)))
        ex.image, ex.depth, ex.mask = bundle.image, bundle.depth, bundle.mask
        return ex
    if flow is None:
        raise ValueError("a bundle without analytic metadata needs flow.npz supervision")
    from .synthlab.scenes import boundary_band

    rng = np.random.default_rng(seed)
    horizon = float(bundle.meta.get("n_frames", len(bundle.trajectory))) / fps
    pts = _pixel_lifts(bundle, bundle.mask, n_probe, rng)
    bp = _pixel_lifts(bundle, boundary_band(bundle.mask), n_boundary, rng)
    # no ground-truth motion at the probes: every boundary probe is taken as staying inside
    return DynamicsExample(bundle.image, bundle.depth, bundle.mask, bundle.camera, horizon,
                           1.0 / fps, flow, pts, rng.uniform(0, horizon, n_probe),
                           BoundaryProbe(bp, rng.uniform(0, horizon, n_boundary),
                                         np.ones(n_boundary, dtype=bool)),
                           MaskRegion(bundle.mask, bundle.camera))


def bundle_kernels(bundle: SceneBundle) -> GaussianScene:
    return gaussians_from_image(bundle.image, bundle.depth, bundle.mask, bundle.camera)


def animate_bundle(bundle: SceneBundle, model, config: AnimationConfig, decoder=None,
                   feature_seed: int = 0) -> list[np.ndarray]:
    field_ = model.condition(bundle.image, bundle.depth, bundle.mask)
    G0 = bundle_kernels(bundle)
    if decoder is not None and not decoder.identity:
        G0 = feature_scene(G0, decoder.in_channels, feature_seed)
    traj = bundle.trajectory
    if len(traj) != config.n_frames:
        raise ValueError(f"trajectory has {len(traj)} cameras, animation needs {config.n_frames}")
    return render_video(G0, field_, traj, config, decoder)


def load_frames(directory) -> list[np.ndarray]:
    paths = sorted(Path(directory).glob("frame_*.png"))
    if not paths:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    return [load_png(p)[..., :3] for p in paths]


def evaluate(bundle: SceneBundle, frames, reference, model=None, n_probes: int = 2000,
             seed: int = 0) -> EvalReport:
    """Frame metrics against ``reference`` plus velocity metrics when an oracle exists.

    Without a model the oracle itself is scored (all velocity errors are zero).
    """
    t0 = time.perf_counter()
    rep = frame_metrics(frames, reference, bundle.mask)
    rep.runtimes["frames"] = time.perf_counter() - t0
    scene = oracle_scene(bundle)
    if scene is None:
        return rep
    from .synthlab.scenes import sample_physics_probes

    t0 = time.perf_counter()
    fld = scene.field if model is None else model.condition(bundle.image, bundle.depth, bundle.mask)
    pts, ts = sample_physics_probes(scene, n_probes, seed=seed)
    err = velocity_l1(fld, scene.field, pts, ts)
    rep.epe, rep.l1_component, rep.l1_vector = err.epe, err.l1_component, err.l1_vector
    rep.mean_abs_div = mean_abs_divergence(fld, pts, ts)
    G0 = bundle_kernels(bundle)
    rep.violation_rate = boundary_violation_rate(fld, scene.region, G0.centers[G0.fluid], 0.0,
                                                 scene.dt, scene.n_frames, oracle=scene.field)
    rep.runtimes["velocity"] = time.perf_counter() - t0
    return rep
