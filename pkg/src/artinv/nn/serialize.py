"""Checkpoint files: text header + named little-endian float32 leaves."""

import hashlib
import json

import numpy as np

__all__ = ["config_hash", "save_arrays", "load_arrays", "CheckpointError"]

MAGIC = "ARTINV_CKPT 1"


class CheckpointError(Exception):
    pass


def config_hash(config) -> str:
    """Stable hash of a config mapping, insensitive to key order."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_arrays(path, meta, arrays):
    """Write ``arrays`` (name -> ndarray) as float32 LE with a text header."""
    names = sorted(arrays)
    with open(path, "wb") as fh:
        lines = [MAGIC]
        for key in sorted(meta):
            lines.append(f"{key} {meta[key]}")
        lines.append(f"n_leaves {len(names)}")
        for name in names:
            shape = ",".join(str(n) for n in arrays[name].shape)
            lines.append(f"leaf {name} {shape if shape else '-'}")
        lines.append("end_header\n")
        fh.write("\n".join(lines).encode())
        for name in names:
            fh.write(np.ascontiguousarray(
                arrays[name], dtype="<f4").tobytes())


def load_arrays(path):
    """Read a checkpoint; returns ``(meta, arrays)`` with float32 arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise CheckpointError(f"{path}: missing end_header")
    try:
        header = raw[:end].decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: corrupt header")
    if not header or header[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic line")
    meta = {}
    leaves = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "leaf":
            name, _, shape = rest.partition(" ")
            dims = () if shape == "-" else tuple(int(n) for n in shape.split(","))
            leaves.append((name, dims))
        elif key == "n_leaves":
            meta[key] = int(rest)
        else:
            meta[key] = rest
    if meta.get("n_leaves") != len(leaves):
        raise CheckpointError(f"{path}: leaf count mismatch")
    payload = raw[end + len(b"end_header\n"):]
    arrays = {}
    offset = 0
    for name, dims in leaves:
        count = int(np.prod(dims)) if dims else 1
        nbytes = 4 * count
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at leaf '{name}'")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f4")
        arrays[name] = arr.reshape(dims).copy() if dims else arr[0]
        offset += nbytes
    return meta, arrays
