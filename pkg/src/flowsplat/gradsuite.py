"""Finite-difference audit of every training loss on a tiny random model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .diffengine import backprop, no_grad
from .diffengine.gradcheck import fd_gradient, max_relative_error
from .neuralfield import FieldConfig, VelocityFieldModel
from .physics import BoundaryProbe, SceneFlowSample, loss_boundary, loss_div, loss_motion, loss_ns

TINY = dict(feature_channels=2, encoder_width=3, encoder_stages=1, mlp_widths=(12,), n_freqs=1,
            force_width=3)


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    n_params: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def tiny_problem(seed: int = 0, activation: str = "softplus", size: int = 16):
    """A <= 1e3-parameter model on a small synthetic rock scene, with fixed probe sets.

    All parameters are drawn at random (including zero-initialized heads) so every
    gradient entry is exercised.
    """
    from .synthlab import make_scene, sample_boundary_probes, sample_scene_flow
    from .synthlab.scenes import sample_physics_probes

    scene = make_scene("rock", size=size, seed=seed)
    cfg = FieldConfig(activation=activation, seed=seed, **TINY)
    model = VelocityFieldModel(cfg, scene.camera, scene.horizon)
    rng = np.random.default_rng(seed + 1000)
    model.params.set_flat(rng.normal(0.0, 0.4, size=model.params.size()))
    flow = sample_scene_flow(scene, 24, seed=seed)
    pts, ts = sample_physics_probes(scene, 24, seed=seed)
    bnd = sample_boundary_probes(scene, 24, seed=seed)
    # a long displacement horizon so a good share of probes has w = 1
    bnd = BoundaryProbe(bnd.position, bnd.t, np.ones(len(bnd), dtype=bool))
    return scene, model, flow, (pts, ts), bnd


def loss_builders(scene, model, flow: SceneFlowSample, probes, bnd: BoundaryProbe, dt: float = 4.0):
    pts, ts = probes

    def field_():
        return model.condition(scene.image, scene.depth, scene.mask)

    return {
        "motion": lambda: loss_motion(field_(), flow),
        "ns": lambda: loss_ns(field_(), pts, ts),
        "div": lambda: loss_div(field_(), pts, ts),
        "boundary": lambda: loss_boundary(field_(), bnd, scene.region, dt),
    }


def run_gradcheck(seed: int = 0, activation: str = "softplus", h: float = 1e-5) -> list[GradcheckResult]:
    scene, model, flow, probes, bnd = tiny_problem(seed, activation)
    out = []
    for name, build in loss_builders(scene, model, flow, probes, bnd).items():
        t0 = time.perf_counter()
        backprop(build(), model.params, allow_unused=True)
        analytic = model.params.flat_grad().copy()

        def value():
            with no_grad():
                return build().item()

        numeric = fd_gradient(value, model.params, h=h)
        out.append(GradcheckResult(name, max_relative_error(analytic, numeric),
                                   model.params.size(), time.perf_counter() - t0))
    return out
