"""Binary parameter checkpoints.

Layout: 8-byte magic ``b"EEOCKPT1"``, little-endian uint64 dimension, then
``dim`` little-endian float64 values.
"""
import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"EEOCKPT1"
_HEADER = struct.Struct("<8sQ")


def save_checkpoint(params, path):
    params = np.ascontiguousarray(params, dtype="<f8")
    if params.ndim != 1:
        raise CheckpointError("checkpoint expects a flat parameter vector")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, len(params)))
        f.write(params.tobytes())


def load_checkpoint(path, expected_dim=None):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: corrupt checkpoint (truncated header)")
    magic, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: corrupt checkpoint (bad magic)")
    if len(blob) != _HEADER.size + 8 * dim:
        raise CheckpointError(f"{path}: corrupt checkpoint (size does not match dim {dim})")
    if expected_dim is not None and dim != expected_dim:
        raise CheckpointError(f"{path}: dim mismatch, file has {dim}, expected {expected_dim}")
    params = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise CheckpointError(f"{path}: checkpoint contains non-finite values")
    return params


def checkpoint_io(params, path, direction, expected_dim=None):
    if direction == "save":
        save_checkpoint(params, path)
        return None
    if direction == "load":
        return load_checkpoint(path, expected_dim)
    raise ValueError("direction must be 'save' or 'load'")
