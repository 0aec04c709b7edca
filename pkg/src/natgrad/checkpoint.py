"""Checkpoint files: a human-readable header plus raw float32 payloads.

Layout::

    natgrad-checkpoint v1
    byte-order little-endian
    array <name> shape <d0,d1,...> dtype float32 offset <bytes> crc32 <hex>
    ...
    end-header
    <raw little-endian float32 payloads at the declared offsets>

Offsets are relative to the end of the header.  Every payload carries a
crc32 so single-byte corruption is caught on load.
"""

from __future__ import annotations

import io
import zlib

import numpy as np

MAGIC = "natgrad-checkpoint"
VERSION = "v1"


class CheckpointError(ValueError):
    pass


def _encode_name(name):
    if isinstance(name, tuple):
        return "/".join(str(p) for p in name)
    return str(name)


def _decode_name(s):
    parts = s.split("/")
    return tuple(parts) if len(parts) > 1 else s


def save_checkpoint(path, arrays):
    """Write named float arrays (dict name -> np.ndarray) to ``path``.

    Tuple keys are joined with '/'.  Arrays are stored as little-endian
    float32; a bit-exact round trip is guaranteed at 32-bit resolution.
    """
    items = []
    offset = 0
    for name in sorted(arrays, key=_encode_name):
        # note: asarray with order="C" keeps 0-d shapes, ascontiguousarray
        # would silently promote them to 1-d
        a = np.asarray(arrays[name], dtype="<f4", order="C")
        payload = a.tobytes()
        items.append((_encode_name(name), a.shape, offset,
                      zlib.crc32(payload), payload))
        offset += len(payload)
    header = io.StringIO()
    header.write(f"{MAGIC} {VERSION}\n")
    header.write("byte-order little-endian\n")
    for name, shape, off, crc, _ in items:
        shape_s = ",".join(str(d) for d in shape) or "scalar"
        header.write(f"array {name} shape {shape_s} dtype float32 "
                     f"offset {off} crc32 {crc:08x}\n")
    header.write("end-header\n")
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        for *_rest, payload in items:
            f.write(payload)


def load_checkpoint(path):
    """Read a checkpoint back into {name: float64 array}."""
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end-header\n")
    if end < 0:
        raise CheckpointError("missing header terminator")
    header = raw[:end].decode("utf-8").splitlines()
    body = raw[end + len(b"end-header\n"):]
    if not header or not header[0].startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    magic, version = header[0].split()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version: {version}")
    if header[1] != "byte-order little-endian":
        raise CheckpointError("unsupported byte order")
    arrays = {}
    for line in header[2:]:
        parts = line.split()
        if not parts or parts[0] != "array":
            raise CheckpointError(f"bad header line: {line!r}")
        name = _decode_name(parts[1])
        shape = () if parts[3] == "scalar" else tuple(int(d) for d in parts[3].split(","))
        offset = int(parts[7])
        crc = int(parts[9], 16)
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(body):
            raise CheckpointError(f"payload out of range for {parts[1]}")
        payload = body[offset:offset + nbytes]
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"checksum failure for {parts[1]}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return arrays


def describe_checkpoint(path):
    """Header metadata without loading payloads (for inspection)."""
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end-header\n")
    if end < 0:
        raise CheckpointError("missing header terminator")
    return raw[:end].decode("utf-8")


def save_meta_params(path, meta, extra=None):
    arrays = dict(meta.arrays)
    if extra:
        arrays.update(extra)
    save_checkpoint(path, arrays)


def load_meta_params(path, meta_cls):
    arrays = load_checkpoint(path)
    meta_arrays = {k: v for k, v in arrays.items()
                   if isinstance(k, tuple) and len(k) == 3}
    return meta_cls(meta_arrays)
