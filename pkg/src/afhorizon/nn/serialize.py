"""Weight-file container: `AFH1` magic, JSON manifest, float32 blobs.

Layout: 4-byte magic ``AFH1``, little-endian u32 manifest length, UTF-8 JSON
manifest, then the concatenated little-endian float32 tensor payloads at the
byte offsets the manifest declares.  The manifest records tensor names,
shapes, dtypes, offsets, the architecture and training configuration, and
the training RNG seed, so a file is self-describing.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .network import ModelParams, NetConfig
from .train import TrainConfig

MAGIC = b"AFH1"
FORMAT_VERSION = 1


def _config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _net_config_from_dict(d: dict) -> NetConfig:
    d = dict(d)
    d["block_channels"] = tuple(d["block_channels"])
    d["downsample"] = tuple(d["downsample"])
    return NetConfig(**d)


def save_params(
    path: str | Path,
    params: ModelParams,
    train_config: TrainConfig | None = None,
    seed: int | None = None,
) -> None:
    """Write a model (tensors, running stats, Adam moments) to ``path``."""
    groups = (("tensor", params.tensors), ("opt_m", params.opt_m), ("opt_v", params.opt_v))
    entries = []
    blobs = []
    offset = 0
    for role, mapping in groups:
        for name, arr in mapping.items():
            if arr.dtype != np.float32:
                raise ValidationError(
                    f"{role} {name} has dtype {arr.dtype}; weight files store float32"
                )
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append(
                {
                    "role": role,
                    "name": name,
                    "shape": list(arr.shape),
                    "dtype": "float32",
                    "offset": offset,
                    "nbytes": len(blob),
                }
            )
            blobs.append(blob)
            offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "net_config": _config_to_dict(params.config),
        "train_config": _config_to_dict(train_config) if train_config else None,
        "seed": seed,
        "step": params.step,
        "tensors": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def read_manifest(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValidationError(f"{path}: not an AFH1 weight file")
        (length,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(length).decode("utf-8"))


def load_params(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a weight file back into a ModelParams; also returns the manifest."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValidationError(f"{path}: not an AFH1 weight file")
        (length,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        payload = fh.read()
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version")
    params = ModelParams(
        config=_net_config_from_dict(manifest["net_config"]),
        tensors={},
        step=int(manifest["step"]),
    )
    target = {"tensor": params.tensors, "opt_m": params.opt_m, "opt_v": params.opt_v}
    for entry in manifest["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValidationError(f"{path}: truncated tensor payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        target[entry["role"]][entry["name"]] = arr
    return params, manifest


def load_train_config(manifest: dict) -> TrainConfig | None:
    if manifest.get("train_config") is None:
        return None
    return TrainConfig(**manifest["train_config"])
