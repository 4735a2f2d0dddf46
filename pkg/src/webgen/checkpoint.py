"""Binary checkpoints: magic, version, JSON header, little-endian float32 blobs.

Layout::

    b"WEBGENCK"  uint32 version  uint32 header_len  header (UTF-8 JSON)  blobs

The header records the model kind, its hyperparameters, the normalization
parameters and a table of ``(name, shape, offset)`` for every blob.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .argen import ArGenModel
from .dataset import NormalizationParams
from .diffusion import DiffusionModel, NoiseSchedule

MAGIC = b"WEBGENCK"
VERSION = 1
KINDS = ("sparse-diffusion", "full-diffusion", "argen")


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    state = model.net.state_dict()
    blobs, table, offset = [], [], 0
    for name, arr in state.items():
        b = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    header = {
        "kind": model.model_kind,
        "hyperparameters": model.hyperparameters(),
        "normalization": model.normalization.to_dict() if model.normalization else None,
        "blobs": table,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(hb)) + hb)
        for b in blobs:
            fh.write(b)


def read_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    body = data[start + hlen:]
    need = sum(b["nbytes"] for b in header["blobs"])
    if len(body) != need:
        raise CheckpointError(f"{path}: expected {need} bytes of parameters, found {len(body)}")
    return header, body


def _build(header: dict):
    hp = header["hyperparameters"]
    norm = NormalizationParams.from_dict(header["normalization"]) if header["normalization"] else None
    if header["kind"] == "argen":
        cfg = dict(hp["argen"])
        max_nodes = cfg.pop("max_nodes")
        return ArGenModel(hp["preset"], max_nodes, normalization=norm, **cfg)
    unet = {k: v for k, v in hp["unet"].items() if k not in ("in_features", "length")}
    return DiffusionModel(hp["kind"], hp["preset"], hp["max_nodes"], NoiseSchedule(**hp["schedule"]),
                          normalization=norm, sigma_data=hp["sigma_data"], **unet)


def load_checkpoint(path, expect_kind: str | None = None):
    """Rebuild the model stored at ``path``; optionally insist on its kind."""
    header, body = read_header(path)
    kind = header.get("kind")
    if kind not in KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: holds a {kind} model, expected {expect_kind}")
    model = _build(header)
    state = {}
    for b in header["blobs"]:
        arr = np.frombuffer(body, dtype="<f4", count=b["nbytes"] // 4, offset=b["offset"])
        state[b["name"]] = arr.reshape(b["shape"])
    model.net.load_state_dict(state)
    return model
