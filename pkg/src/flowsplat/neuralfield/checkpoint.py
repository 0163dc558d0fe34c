"""Binary checkpoint format for :class:`VelocityFieldModel`.

Layout (all integers little-endian)::

    bytes 0-7    magic  b"FLWSPLT\\x00"
    bytes 8-11   uint32 format version (currently 1)
    bytes 12-15  uint32 header length L
    next L bytes UTF-8 JSON header: {"config", "camera", "horizon", "params": [[name, shape], ...]}
    remainder    float64 little-endian arrays, C order, in header "params" order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..scene.camera import Camera
from .model import FieldConfig, VelocityFieldModel

MAGIC = b"FLWSPLT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: VelocityFieldModel, path) -> None:
    header = {
        "config": model.config.to_dict(),
        "camera": model.camera.to_dict(exact=True),
        "horizon": model.horizon,
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, t in model.params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> VelocityFieldModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError("not a flowsplat checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen])
    model = VelocityFieldModel(FieldConfig(**header["config"]),
                               Camera.from_dict(header["camera"]), header["horizon"])
    offset = 16 + hlen
    values = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        if offset + 8 * n > len(raw):
            raise CheckpointError("checkpoint is truncated")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        values[name] = arr.astype(np.float64)
        offset += 8 * n
    if offset != len(raw):
        raise CheckpointError("checkpoint size does not match its shape table")
    if list(values) != model.params.names():
        raise CheckpointError("checkpoint parameter table does not match model layout")
    model.params.load(values)
    return model
