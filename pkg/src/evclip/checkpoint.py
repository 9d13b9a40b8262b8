"""Versioned binary archive for encoder parameters and training metadata.

Layout (little-endian)::

    magic b"EVCK" | u16 version | u16 reserved | u32 header length | u32 crc32
    header: UTF-8 JSON, keys sorted
    payload: every array as float64, in header order

The CRC covers header and payload.  The header lists, per encoder, its arch,
role, frozen flag and ``[name, shape]`` pairs; ``meta`` holds arbitrary JSON
(step counter, RNG state, metric history).  Writing the same content twice
yields identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import nn
from .encoders import EncoderParams
from .errors import DataError

MAGIC = b"EVCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHHII")


def dumps(encoders: dict[str, EncoderParams], meta: dict | None = None) -> bytes:
    header = {"encoders": {}, "meta": meta or {}}
    payload = []
    for key in sorted(encoders):
        enc = encoders[key]
        arrays = []
        for name in sorted(enc.params):
            arr = np.ascontiguousarray(enc.params[name], dtype="<f8")
            arrays.append([name, list(arr.shape)])
            payload.append(arr.tobytes())
        header["encoders"][key] = {
            "arch": enc.arch.to_dict(),
            "role": enc.role,
            "frozen": enc.frozen,
            "arrays": arrays,
        }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = head + b"".join(payload)
    return _PREFIX.pack(MAGIC, VERSION, 0, len(head), zlib.crc32(body)) + body


def loads(buf: bytes) -> tuple[dict[str, EncoderParams], dict]:
    if len(buf) < _PREFIX.size:
        raise DataError("checkpoint truncated before header")
    magic, version, _, head_len, crc = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise DataError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}, expected {VERSION}")
    body = buf[_PREFIX.size:]
    if zlib.crc32(body) != crc:
        raise DataError("checkpoint is corrupt (CRC mismatch)")
    try:
        header = json.loads(body[:head_len].decode("utf-8"))
    except ValueError as exc:
        raise DataError("checkpoint header is not valid JSON") from exc
    off = head_len
    encoders = {}
    for key in sorted(header["encoders"]):
        spec = header["encoders"][key]
        params = {}
        for name, shape in spec["arrays"]:
            n = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
        encoders[key] = EncoderParams(nn.arch_from_dict(spec["arch"]), params, spec["role"], spec["frozen"])
    if off != len(body):
        raise DataError("checkpoint payload size does not match header")
    return encoders, header["meta"]


def save(path, encoders: dict[str, EncoderParams], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(encoders, meta))


def load(path) -> tuple[dict[str, EncoderParams], dict]:
    return loads(Path(path).read_bytes())


def save_teacher(path, image: EncoderParams, text: EncoderParams, meta: dict | None = None) -> None:
    save(path, {"image": image, "text": text}, meta)


def load_teacher(path) -> tuple[EncoderParams, EncoderParams]:
    enc, _ = load(path)
    if set(enc) != {"image", "text"}:
        raise DataError(f"{path}: teacher checkpoint must hold image and text encoders, found {sorted(enc)}")
    return enc["image"], enc["text"]
