"""Convolutional decoding of rendered feature maps to RGB."""

from __future__ import annotations

import numpy as np

from ..diffengine import ParameterSet, Tensor, no_grad
from ..diffengine import tensor as T
from .raster import Framebuffer


class Decoder:
    """Stack of 3x3 convolutions with ReLU between layers; ``identity`` passes through."""

    def __init__(self, in_channels: int, hidden: int = 16, layers: int = 3,
                 seed: int = 0, identity: bool = False, zero: bool = False):
        self.in_channels = in_channels
        self.identity = identity
        self.params = ParameterSet()
        self.layers = 0 if identity else layers
        if identity:
            if in_channels != 3:
                raise ValueError("pass-through decoding needs a 3-channel payload")
            return
        rng = np.random.default_rng(seed)
        widths = [in_channels] + [hidden] * (layers - 1) + [3]
        for i, (ci, co) in enumerate(zip(widths[:-1], widths[1:])):
            std = 0.0 if zero else np.sqrt(2.0 / (ci * 9))
            self.params.add(f"dec.{i}.w", rng.normal(0.0, std, size=(co, ci, 3, 3)))
            self.params.add(f"dec.{i}.b", np.zeros(co))

    @classmethod
    def passthrough(cls) -> "Decoder":
        return cls(3, identity=True)

    def forward(self, features: Tensor) -> Tensor:
        """(C, H, W) tensor -> (3, H, W) tensor."""
        if features.shape[0] != self.in_channels:
            raise ValueError(f"decoder expects {self.in_channels} channels, got {features.shape[0]}")
        if self.identity:
            return features
        h = features
        for i in range(self.layers):
            h = T.conv2d(h, self.params[f"dec.{i}.w"], self.params[f"dec.{i}.b"], stride=1, pad=1)
            if i < self.layers - 1:
                h = T.relu(h)
        return h


def decode_features(fb: Framebuffer | np.ndarray, decoder: Decoder) -> np.ndarray:
    """Feature framebuffer (H, W, C) -> RGB image (H, W, 3)."""
    feat = fb.color if isinstance(fb, Framebuffer) else np.asarray(fb)
    if feat.shape[2] != decoder.in_channels:
        raise ValueError(f"payload has {feat.shape[2]} channels, decoder expects {decoder.in_channels}")
    if decoder.identity:
        return feat.copy()
    with no_grad():
        out = decoder.forward(Tensor(np.transpose(feat, (2, 0, 1))))
    return np.transpose(out.data, (1, 2, 0))


def save_decoder(decoder: Decoder, path, feature_seed: int = 0) -> None:
    """npz with a JSON ``__config__`` entry and one array per parameter."""
    import json

    cfg = {"in_channels": decoder.in_channels, "identity": decoder.identity,
           "layers": decoder.layers, "names": decoder.params.names(),
           "feature_seed": int(feature_seed)}
    hidden = decoder.params["dec.0.w"].shape[0] if decoder.layers > 1 else 16
    cfg["hidden"] = int(hidden)
    arrays = {f"p{i}": t.data for i, t in enumerate(decoder.params.tensors())}
    with open(path, "wb") as fh:
        np.savez(fh, __config__=np.array(json.dumps(cfg)), **arrays)


def load_decoder(path) -> tuple[Decoder, int]:
    """Returns the decoder and the seed of the feature projection it was trained with."""
    import json

    with np.load(path) as z:
        cfg = json.loads(str(z["__config__"]))
        if cfg["identity"]:
            return Decoder.passthrough(), cfg["feature_seed"]
        dec = Decoder(cfg["in_channels"], cfg["hidden"], cfg["layers"])
        dec.params.load({name: z[f"p{i}"] for i, name in enumerate(cfg["names"])})
    return dec, cfg["feature_seed"]
