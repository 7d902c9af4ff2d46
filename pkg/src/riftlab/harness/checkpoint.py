"""Self-validating binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"RIFTCKPT"
    version    u32
    digest     32 bytes sha256 of the network description
    n_layers   u32
    per layer:
        name_len u16, name utf-8
        n_arrays u8
        per array: key_len u8, key utf-8, ndim u8, dims u32 * ndim,
                   payload float64 little-endian, row-major
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from ..network import NetworkSpec, ParamSet, check_params

MAGIC = b"RIFTCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def encode(params: ParamSet, spec: NetworkSpec) -> bytes:
    check_params(spec, params)
    out = [MAGIC, struct.pack("<I", VERSION), spec.digest(), struct.pack("<I", len(params))]
    for name in spec.param_layers():
        entry = params[name]
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", len(entry)))
        for key in ("weight", "bias"):
            if key not in entry:
                continue
            arr = entry[key]
            out.append(struct.pack("<B", len(key)) + key.encode())
            out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, spec: NetworkSpec) -> ParamSet:
    if len(buf) < len(MAGIC) + 4 + 32 + 4 + 4:
        raise CheckpointError("truncated checkpoint")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if r.take(32) != spec.digest():
        raise CheckpointError("network digest mismatch: checkpoint was saved for a different network")
    (n_layers,) = r.unpack("<I")
    params: ParamSet = {}
    for _ in range(n_layers):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (n_arrays,) = r.unpack("<B")
        entry = {}
        for _ in range(n_arrays):
            (key_len,) = r.unpack("<B")
            key = r.take(key_len).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
            entry[key] = arr
        params[name] = entry
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    try:
        check_params(spec, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return params


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(params: ParamSet, spec: NetworkSpec, path) -> None:
    atomic_write(path, encode(params, spec))


def load_checkpoint(path, spec: NetworkSpec) -> ParamSet:
    with open(path, "rb") as f:
        return decode(f.read(), spec)
