"""Optimization: the dynamics stage (motion + physics) and the decoder stage (L1)."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .diffengine import NumericFailure, ParameterSet, Tensor, backprop
from .diffengine import tensor as T
from .neuralfield import FieldConfig, HintMap, VelocityFieldModel, load_checkpoint, save_checkpoint
from .physics import (BoundaryProbe, LossReport, LossWeights, SceneFlowSample, loss_boundary,
                      loss_motion, loss_physics, ns_div_losses)
from .renderer import Decoder, rasterize
from .scene.camera import Camera
from .scene.gaussians import GaussianScene


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, checkpoint):
        super().__init__(f"loss became non-finite at iteration {iteration}; "
                         f"last good checkpoint: {checkpoint}")
        self.iteration = iteration
        self.checkpoint = checkpoint


# -- Adam ------------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-4,
              betas=(0.0, 0.9), eps: float = 1e-8) -> tuple[dict, AdamState]:
    """Bias-corrected adaptive-moment update; returns new arrays and the advanced state."""
    b1, b2 = betas
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {np.shape(p)}")
        m = b1 * state.m.get(k, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
        mhat = m / (1 - b1**step)
        vhat = v / (1 - b2**step)
        new_p[k] = p - lr * mhat / (np.sqrt(vhat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(step, new_m, new_v)


class Adam:
    """In-place Adam over a ParameterSet's gradient buffers."""

    def __init__(self, params: ParameterSet, lr: float = 1e-4, betas=(0.0, 0.9), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float | None = None) -> None:
        new, self.state = adam_step(self.params.values(), self.params.grads(), self.state,
                                    self.lr if lr is None else lr, self.betas, self.eps)
        for k, t in self.params.items():
            t.data[...] = new[k]


def step_decay(base_lr: float, iteration: int, total: int, at=(0.4, 0.8), rate: float = 0.5) -> float:
    """Learning rate multiplied by ``rate`` after each fraction in ``at`` of the run."""
    passed = sum(iteration >= int(round(f * total)) for f in at)
    return base_lr * rate**passed


# -- configuration ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-4
    betas: tuple = (0.0, 0.9)
    eps: float = 1e-8
    iterations: int = 5000
    batch_flow: int = 256
    batch_physics: int = 256
    batch_boundary: int = 128
    decay_at: tuple = (0.4, 0.8)
    decay_rate: float = 0.5
    seed: int = 0
    physics: bool = True
    external_force: bool = True
    hints: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    model: FieldConfig = field(default_factory=FieldConfig)
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    deterministic: bool = True
    threads: int | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.model, dict):
            self.model = FieldConfig(**self.model)
        self.betas = tuple(float(b) for b in self.betas)
        self.decay_at = tuple(float(a) for a in self.decay_at)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        # the ablation switches own these model flags
        self.model = replace(self.model, force_head=self.external_force, use_hints=self.hints)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["decay_at"] = list(self.decay_at)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "TrainConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def to_yaml(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def hash(self) -> str:
        d = self.to_dict()
        for k in ("checkpoint_dir", "threads"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def compute_threads(config_threads: int | None, deterministic: bool):
    """BLAS thread limit: explicit setting, else one thread in deterministic mode."""
    if config_threads is not None:
        return threadpool_limits(int(config_threads))
    if deterministic:
        return threadpool_limits(1)
    return nullcontext()


# -- data ------------------------------------------------------------------------------------

@dataclass
class DynamicsExample:
    """One conditioning image with its supervision pools."""

    image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    camera: Camera
    horizon: float
    dt: float
    flow: SceneFlowSample
    probe_points: np.ndarray
    probe_t: np.ndarray
    boundary: BoundaryProbe
    region: object
    hints: HintMap | None = None


def example_from_scene(scene, n_flow: int = 4096, n_probe: int = 4096, n_boundary: int = 2048,
                       seed: int = 0, flow: SceneFlowSample | None = None,
                       assume_inside: bool = False) -> DynamicsExample:
    from .synthlab.scenes import sample_boundary_probes, sample_physics_probes, sample_scene_flow

    if flow is None:
        flow = sample_scene_flow(scene, n_flow, seed=seed)
    pp, pt = sample_physics_probes(scene, n_probe, seed=seed + 1)
    bp = sample_boundary_probes(scene, n_boundary, seed=seed + 2, assume_inside=assume_inside)
    return DynamicsExample(scene.image, scene.depth, scene.mask, scene.camera, scene.horizon,
                           scene.dt, flow, pp, pt, bp, scene.region)


def _pick(rng, n_pool: int, n: int) -> np.ndarray:
    return rng.choice(n_pool, size=min(n, n_pool), replace=False)


# -- log ----------------------------------------------------------------------------------------

LOG_COLUMNS = ("iteration", "motion", "ns", "div", "boundary", "physics", "total", "lr")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    wall_clock: float = 0.0

    def append(self, iteration: int, report: LossReport, lr: float):
        if self.rows and iteration <= self.rows[-1]["iteration"]:
            raise ValueError("log iterations must increase")
        self.rows.append({"iteration": iteration, **report.row(), "lr": lr})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path=None) -> str:
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r["iteration"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def same_losses(self, other: "TrainLog") -> bool:
        return self.rows == other.rows and self.seed == other.seed \
            and self.config_hash == other.config_hash


# -- dynamics stage ------------------------------------------------------------------------------

def dynamics_losses(field_, ex: DynamicsExample, idx_flow, idx_probe, idx_bnd,
                    config: TrainConfig) -> tuple[Tensor, LossReport]:
    fl = ex.flow
    batch = SceneFlowSample(fl.position[idx_flow], fl.t[idx_flow], fl.u_gt[idx_flow])
    l_motion = loss_motion(field_, batch)
    rep = LossReport(weights=config.weights)
    total = l_motion
    if config.physics:
        l_ns, l_div = ns_div_losses(field_, ex.probe_points[idx_probe], ex.probe_t[idx_probe])
        b = ex.boundary
        l_b = loss_boundary(field_, BoundaryProbe(b.position[idx_bnd], b.t[idx_bnd],
                                                  b.stays_inside_gt[idx_bnd]), ex.region, ex.dt)
        l_phys = loss_physics(l_ns, l_div, l_b, config.weights)
        total = l_motion + l_phys * config.weights.physics
        rep.ns, rep.div, rep.boundary, rep.physics = (l_ns.item(), l_div.item(), l_b.item(),
                                                      l_phys.item())
    rep.motion = l_motion.item()
    rep.total = total.item()
    return total, rep


def build_model(examples: list[DynamicsExample], config: TrainConfig) -> VelocityFieldModel:
    ex = examples[0]
    return VelocityFieldModel(replace(config.model, seed=config.seed), ex.camera, ex.horizon)


def _save(model, config: TrainConfig, name: str):
    if not config.checkpoint_dir:
        return None
    d = Path(config.checkpoint_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, d / name)
    return d / name


def train_dynamics(examples: list[DynamicsExample], config: TrainConfig,
                   model: VelocityFieldModel | None = None,
                   callback=None) -> tuple[VelocityFieldModel, TrainLog]:
    """Minimize L_motion (+ lambda_physics L_physics) with Adam; one scene per step."""
    if not examples:
        raise ValueError("training needs at least one example")
    model = build_model(examples, config) if model is None else model
    log = TrainLog(seed=config.seed, config_hash=config.hash())
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr, config.betas, config.eps)
    good = {k: v.copy() for k, v in model.params.values().items()}
    good_path = _save(model, config, "init.ckpt")
    t0 = time.perf_counter()
    with compute_threads(config.threads, config.deterministic):
        for it in range(config.iterations):
            ex = examples[it % len(examples)]
            idx_f = _pick(rng, len(ex.flow), config.batch_flow)
            idx_p = _pick(rng, len(ex.probe_points), config.batch_physics)
            idx_b = _pick(rng, len(ex.boundary), config.batch_boundary)
            try:
                field_ = model.condition(ex.image, ex.depth, ex.mask, ex.hints)
                total, rep = dynamics_losses(field_, ex, idx_f, idx_p, idx_b, config)
                if not np.isfinite(rep.total):
                    raise NumericFailure("loss")
                backprop(total, model.params, allow_unused=True)
            except NumericFailure as exc:
                model.params.load(good)
                raise TrainingDiverged(it, good_path) from exc
            lr = step_decay(config.lr, it, config.iterations, config.decay_at, config.decay_rate)
            opt.step(lr)
            log.append(it, rep, lr)
            if not all(np.isfinite(t.data).all() for t in model.params.tensors()):
                model.params.load(good)
                raise TrainingDiverged(it, good_path)
            good = {k: v.copy() for k, v in model.params.values().items()}
            if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                good_path = _save(model, config, f"iter_{it + 1:06d}.ckpt")
            if callback is not None:
                callback(it, rep)
    log.wall_clock = time.perf_counter() - t0
    _save(model, config, "final.ckpt")
    return model, log


# -- decoder stage ---------------------------------------------------------------------------------

@dataclass
class DecoderConfig:
    feature_channels: int = 8     # 0 selects RGB payloads with a pass-through decoder
    hidden: int = 16
    layers: int = 3
    iterations: int = 2000
    lr: float = 1e-4
    betas: tuple = (0.0, 0.9)
    seed: int = 0
    deterministic: bool = True

    @property
    def passthrough(self) -> bool:
        return self.feature_channels == 0


def feature_projection(channels: int, seed: int = 0) -> np.ndarray:
    """Fixed random lift of RGB colors to ``channels``-dim kernel payloads."""
    return np.random.default_rng(seed + 7919).normal(0.0, 1.0, size=(3, channels))


def feature_scene(scene: GaussianScene, channels: int, seed: int = 0) -> GaussianScene:
    if channels == 0:
        return scene
    return replace(scene, payload=np.tanh(scene.payload @ feature_projection(channels, seed)))


@dataclass
class DecoderExample:
    """Kernel scenes with per-frame RGB payloads and the matching reference frames."""

    scenes: list
    cameras: list
    targets: list


def decoder_example_from_scene(scene, frames=(0,), size_check: bool = True) -> DecoderExample:
    from .synthlab.scenes import ground_truth_payload

    gs = scene.gaussians()
    scenes, cams, targets = [], [], []
    for k in frames:
        g = replace(gs, payload=ground_truth_payload(scene, gs, k * scene.dt))
        scenes.append(g)
        cams.append(scene.camera)
        targets.append(rasterize(g, scene.camera).color)
    return DecoderExample(scenes, cams, targets)


def train_decoder(examples: list[DecoderExample], config: DecoderConfig,
                  callback=None) -> tuple[Decoder, list[float]]:
    """Fit the feature decoder to reference frames under an L1 reconstruction loss."""
    if config.passthrough:
        return Decoder.passthrough(), []
    dec = Decoder(config.feature_channels, config.hidden, config.layers, seed=config.seed)
    inputs, targets = [], []
    for ex in examples:
        for g, cam, tgt in zip(ex.scenes, ex.cameras, ex.targets):
            fb = rasterize(feature_scene(g, config.feature_channels, config.seed), cam)
            inputs.append(np.transpose(fb.color, (2, 0, 1)))
            targets.append(np.transpose(tgt, (2, 0, 1)))
    if not inputs:
        raise ValueError("decoder training needs at least one frame")
    opt = Adam(dec.params, config.lr, config.betas)
    losses = []
    with compute_threads(None, config.deterministic):
        for it in range(config.iterations):
            k = it % len(inputs)
            out = dec.forward(Tensor(inputs[k]))
            loss = T.mean(T.relu(out - Tensor(targets[k])) + T.relu(Tensor(targets[k]) - out))
            backprop(loss, dec.params)
            opt.step(step_decay(config.lr, it, config.iterations))
            losses.append(loss.item())
            if callback is not None:
                callback(it, losses[-1])
    return dec, losses


__all__ = ["Adam", "AdamState", "DecoderConfig", "DecoderExample", "DynamicsExample", "TrainConfig",
           "TrainLog", "TrainingDiverged", "adam_step", "build_model", "compute_threads",
           "decoder_example_from_scene", "dynamics_losses", "example_from_scene",
           "feature_projection", "feature_scene", "load_checkpoint", "step_decay",
           "train_decoder", "train_dynamics"]
