"""Image-conditioned velocity field and external-force head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..diffengine import DualVector, ParameterSet, Tensor, concat, constant, no_grad
from ..diffengine import tensor as T
from ..scene.camera import Camera
from .coords import normalize_dual, pixel_to_grid, positional_embedding_dual, project_dual, \
    sample_grid_dual, embed_dim


@dataclass
class FieldConfig:
    feature_channels: int = 16
    encoder_width: int = 16
    encoder_stages: int = 4
    mlp_widths: tuple = (256, 128, 64, 32)
    n_freqs: int = 6
    activation: str = "relu"
    use_hints: bool = False
    force_head: bool = True
    force_width: int = 16
    feature_sampling: str = "current"   # or "initial"
    zero_last: bool = False
    seed: int = 0

    def __post_init__(self):
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        if self.feature_sampling not in ("current", "initial"):
            raise ValueError("feature_sampling must be 'current' or 'initial'")
        if self.activation not in ("relu", "tanh", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        return d


@dataclass
class HintMap:
    flow: np.ndarray    # (H, W, 2)
    valid: np.ndarray   # (H, W) bool

    @classmethod
    def from_sparse(cls, height: int, width: int, hints) -> "HintMap":
        """Rasterize (row, col, du, dv) hints; zero elsewhere."""
        flow = np.zeros((height, width, 2))
        valid = np.zeros((height, width), dtype=bool)
        for r, c, du, dv in hints:
            flow[int(r), int(c)] = (du, dv)
            valid[int(r), int(c)] = True
        return cls(flow, valid)

    def channels(self) -> np.ndarray:
        return np.concatenate([self.flow, self.valid[..., None].astype(np.float64)], axis=2)


def _act(x: DualVector, kind: str) -> DualVector:
    return {"relu": x.relu, "tanh": x.tanh, "softplus": x.softplus}[kind]()


class VelocityFieldModel:
    """Encoder + velocity MLP + force head, with normalization constants of the input view."""

    def __init__(self, config: FieldConfig, camera: Camera, horizon: float):
        self.config = config
        self.camera = camera
        self.width = camera.width
        self.height = camera.height
        self.horizon = float(horizon)
        self.stride = 2 ** config.encoder_stages
        if self.width % self.stride or self.height % self.stride:
            raise ValueError(f"image dims must be divisible by {self.stride}")
        self.params = ParameterSet()
        self._build(np.random.default_rng(config.seed))

    # -- construction ----------------------------------------------------------
    @property
    def in_channels(self) -> int:
        return 5 + (3 if self.config.use_hints else 0)

    @property
    def mlp_in(self) -> int:
        return embed_dim(4, self.config.n_freqs) + self.config.feature_channels

    def _build(self, rng):
        cfg = self.config
        add = self.params.add

        def conv(name, co, ci, k):
            add(f"{name}.w", rng.normal(0.0, np.sqrt(2.0 / (ci * k * k)), size=(co, ci, k, k)))
            add(f"{name}.b", np.zeros(co))

        ci = self.in_channels
        for s in range(cfg.encoder_stages):
            co = cfg.feature_channels if s == cfg.encoder_stages - 1 else cfg.encoder_width
            conv(f"enc.{s}.down", co, ci, 4)
            conv(f"enc.{s}.res", co, co, 3)
            ci = co

        widths = [self.mlp_in, *cfg.mlp_widths, 3]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            gain = 2.0 if cfg.activation == "relu" else 1.0
            std = np.sqrt(gain / a) * (0.1 if last else 1.0)
            w = np.zeros((a, b)) if (last and cfg.zero_last) else rng.normal(0.0, std, size=(a, b))
            add(f"mlp.{i}.w", w)
            add(f"mlp.{i}.b", np.zeros(b))

        if cfg.force_head:
            c, fw = cfg.feature_channels, cfg.force_width
            conv("force.c0", fw, c, 3)
            conv("force.c1", fw, fw, 3)
            add("force.f0.w", rng.normal(0.0, np.sqrt(2.0 / fw), size=(fw, 2 * fw)))
            add("force.f0.b", np.zeros(2 * fw))
            add("force.f1.w", np.zeros((2 * fw, 3)))
            add("force.f1.b", np.zeros(3))

    @property
    def n_layers(self) -> int:
        return len(self.config.mlp_widths) + 1

    # -- encoder ---------------------------------------------------------------
    def encoder_input(self, image, depth, mask, hints: HintMap | None = None) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        h, w = depth.shape
        if image.shape[:2] != (h, w) or mask.shape != (h, w):
            raise ValueError("image, depth and mask must share spatial dims")
        zn = 2.0 / np.maximum(depth, 1.0) - 1.0
        chans = [image, zn[..., None], np.asarray(mask, dtype=np.float64)[..., None]]
        if self.config.use_hints:
            if hints is None:
                hints = HintMap(np.zeros((h, w, 2)), np.zeros((h, w), dtype=bool))
            if hints.flow.shape[:2] != (h, w):
                raise ValueError("hint map dims do not match inputs")
            chans.append(hints.channels())
        return np.transpose(np.concatenate(chans, axis=2), (2, 0, 1))

    def encode(self, image, depth, mask, hints: HintMap | None = None) -> Tensor:
        x = Tensor(self.encoder_input(image, depth, mask, hints))
        p = self.params
        for s in range(self.config.encoder_stages):
            x = T.leaky_relu(T.conv2d(x, p[f"enc.{s}.down.w"], p[f"enc.{s}.down.b"], stride=2, pad=1))
            x = x + T.leaky_relu(T.conv2d(x, p[f"enc.{s}.res.w"], p[f"enc.{s}.res.b"], stride=1, pad=1))
        return x

    def force(self, Z: Tensor) -> Tensor:
        if not self.config.force_head:
            return Tensor(np.zeros(3))
        p = self.params
        h = T.relu(T.conv2d(Z, p["force.c0.w"], p["force.c0.b"], stride=2, pad=1))
        h = T.relu(T.conv2d(h, p["force.c1.w"], p["force.c1.b"], stride=2, pad=1))
        h = T.reshape(T.mean(h, axis=(1, 2)), (1, -1))
        h = T.relu(h @ p["force.f0.w"] + p["force.f0.b"])
        return T.reshape(h @ p["force.f1.w"] + p["force.f1.b"], (3,))

    def condition(self, image, depth, mask, hints: HintMap | None = None) -> "ConditionedField":
        Z = self.encode(image, depth, mask, hints)
        return ConditionedField(self, Z, self.force(Z))

    # -- velocity head -----------------------------------------------------------
    def mlp(self, h):
        p = self.params
        n = self.n_layers
        for i in range(n):
            h = h @ p[f"mlp.{i}.w"] + p[f"mlp.{i}.b"]
            if i < n - 1:
                h = _act(h, self.config.activation)
        return h

    def preactivations(self, h: np.ndarray) -> list[np.ndarray]:
        """Hidden pre-activation values for numeric MLP inputs (kink diagnostics)."""
        out = []
        p = self.params
        for i in range(self.n_layers - 1):
            z = h @ p[f"mlp.{i}.w"].data + p[f"mlp.{i}.b"].data
            out.append(z)
            h = {"relu": lambda v: np.maximum(v, 0), "tanh": np.tanh,
                 "softplus": lambda v: np.logaddexp(0, v)}[self.config.activation](z)
        return out


class ConditionedField:
    """Velocity field bound to one conditioning image (feature grid Z and force f_g)."""

    def __init__(self, model: VelocityFieldModel, features: Tensor, force: Tensor):
        self.model = model
        self.features = features
        self.force = force

    def external_force(self) -> Tensor:
        return self.force

    def mlp_input(self, X: DualVector, feature_points: np.ndarray | None = None) -> DualVector:
        m = self.model
        c = normalize_dual(X, m.camera, m.width, m.height, m.horizon)
        emb = positional_embedding_dual(c, m.config.n_freqs)
        if feature_points is None:
            fp = X.column(slice(0, 3))
        else:
            fp = constant(np.asarray(feature_points, dtype=np.float64))
        xp, yp, _ = project_dual(fp, m.camera)
        feat = sample_grid_dual(self.features, pixel_to_grid(xp, m.stride), pixel_to_grid(yp, m.stride))
        return concat([emb, feat])

    def velocity_dual(self, X: DualVector, feature_points: np.ndarray | None = None) -> DualVector:
        """u(x, t) for an (N, 4) dual of world positions and times."""
        return self.model.mlp(self.mlp_input(X, feature_points))

    def velocity(self, points, t, feature_points=None) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(p),))
        with no_grad():
            out = self.velocity_dual(constant(np.c_[p, tt]), feature_points).primal.data
        return out
