"""Deterministic checkpoint container for model weights.

A checkpoint is a flat name -> array mapping plus a JSON-serializable
meta dict, stored as: 4-byte magic, u32 format version, u32 index
length, the JSON index (sorted keys, no whitespace), then the raw
little-endian array payload in index order. Writing the same arrays
twice yields byte-identical files, so a file-level SHA-256 is a reliable
fingerprint of the weights — which is how the frozen-backbone guarantee
is audited.
"""

import hashlib
import json
import struct

import numpy as np
import torch

from .backbone import ToyBackbone
from .fusion import FusionModule

MAGIC = b"CPK\x01"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised for malformed checkpoint files."""


def save_checkpoint(path, arrays, meta=None):
    """Write a flat ``{name: ndarray}`` mapping; byte-deterministic."""
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index[name] = {
            "dtype": le.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"arrays": index, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint back as ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    if len(blob) < 12 + header_len:
        raise CheckpointFormatError(f"{path}: truncated index")
    try:
        header = json.loads(blob[12 : 12 + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt index ({exc})") from None
    payload = blob[12 + header_len :]
    arrays = {}
    for name, entry in header["arrays"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload at {name!r}")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[name] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def checksum(path):
    """SHA-256 hex digest of a checkpoint file."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


# --- torch glue --------------------------------------------------------------


def _module_arrays(prefix, module):
    return {
        f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()
    }


def _load_module(module, prefix, arrays):
    state = {}
    for name, arr in arrays.items():
        section, _, param = name.partition("/")
        if section == prefix:
            state[param] = torch.from_numpy(np.ascontiguousarray(arr))
    module.load_state_dict(state)
    return module


def save_models(path, backbone, fusion, meta=None):
    """Save a backbone + fusion pair with the shapes needed to rebuild them."""
    meta = dict(meta or {})
    meta["feature_channels"] = backbone.features[0].out_channels
    meta["fusion_hidden"] = fusion.weight_net[0].out_channels
    arrays = _module_arrays("backbone", backbone)
    arrays.update(_module_arrays("fusion", fusion))
    save_checkpoint(path, arrays, meta)


def load_models(path):
    """Rebuild ``(backbone, fusion, meta)`` from a checkpoint; both in eval mode."""
    arrays, meta = load_checkpoint(path)
    try:
        channels = meta["feature_channels"]
        hidden = meta["fusion_hidden"]
    except KeyError as exc:
        raise CheckpointFormatError(f"{path}: missing model shape key {exc}") from None
    backbone = _load_module(ToyBackbone(channels=channels), "backbone", arrays)
    fusion = _load_module(FusionModule(channels=channels, hidden=hidden), "fusion", arrays)
    backbone.eval().requires_grad_(False)
    fusion.eval()
    return backbone, fusion, meta
