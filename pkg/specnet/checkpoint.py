"""
SpecNet - Checkpoint
Versioned binary container for model descriptors and parameters

Layout:
    b"SPNC"            magic
    uint8              layout version (1)
    uint32 LE          header length in bytes
    header             UTF-8 JSON: model, params [[name, shape], ...], stats
    float64 LE         parameter values in header order, C order
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .artifacts import atomic_write_bytes
from .errors import CheckpointError, ShapeError, UsageError
from .network import ModelSpec, SpecNetModel

logger = logging.getLogger("Checkpoint")

MAGIC = b"SPNC"
LAYOUT_VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def encode_checkpoint(model: SpecNetModel, stats: Optional[Dict[str, Any]] = None) -> bytes:
    names = list(model.spec.param_shapes())
    header = {
        "model": model.spec.to_dict(),
        "params": [[name, list(model.params[name].shape)] for name in names],
        "stats": stats,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes() for name in names)
    return _PREFIX.pack(MAGIC, LAYOUT_VERSION, len(header_bytes)) + header_bytes + body


def decode_checkpoint(payload: bytes) -> Tuple[SpecNetModel, Optional[Dict[str, Any]]]:
    if len(payload) < _PREFIX.size:
        raise CheckpointError(f"checkpoint is {len(payload)} bytes, shorter than its {_PREFIX.size}-byte prefix")
    magic, version, header_len = _PREFIX.unpack_from(payload)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    if version != LAYOUT_VERSION:
        raise CheckpointError(f"unsupported checkpoint layout version {version}")
    start = _PREFIX.size
    if len(payload) < start + header_len:
        raise CheckpointError("checkpoint header is truncated")
    try:
        header = json.loads(payload[start:start + header_len].decode("utf-8"))
        spec = ModelSpec.from_dict(header["model"])
        entries = [(name, tuple(shape)) for name, shape in header["params"]]
    except (ValueError, KeyError, TypeError, UsageError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e

    offset = start + header_len
    expected = offset + 8 * sum(int(np.prod(shape)) for _, shape in entries)
    if len(payload) != expected:
        raise CheckpointError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    params = {}
    for name, shape in entries:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    try:
        model = SpecNetModel(spec, params)
    except (ShapeError, UsageError) as e:
        raise CheckpointError(f"checkpoint parameters do not fit its model: {e}") from e
    return model, header.get("stats")


def save_checkpoint(path: Union[str, Path], model: SpecNetModel, stats: Optional[Dict[str, Any]] = None) -> Path:
    out = atomic_write_bytes(path, encode_checkpoint(model, stats))
    logger.info(f"Checkpoint saved: {out} ({model.num_parameters()} parameters)")
    return out


def load_checkpoint(path: Union[str, Path]) -> Tuple[SpecNetModel, Optional[Dict[str, Any]]]:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    model, stats = decode_checkpoint(payload)
    logger.info(f"Checkpoint loaded: {path} ({model.spec.mode}, beta={model.spec.beta})")
    return model, stats
