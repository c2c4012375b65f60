"""Versioned, sectioned binary checkpoints.

Layout (all integers little-endian)::

    b"LEDGFNCK" | u32 version | u32 section count
    per section: u16 name length | name | u8 kind | u64 payload length | u32 crc32 | payload
    sha256 digest of everything above (32 bytes)

Section kinds: 0 = UTF-8 JSON, 1 = named float64 arrays
(u32 count, then per array: u16 name length, name, u8 ndim, u64 dims, '<f8' data).
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import zlib

import numpy as np

from ..exceptions import IntegrityError

MAGIC = b"LEDGFNCK"
VERSION = 1
KIND_JSON = 0
KIND_ARRAYS = 1


def _encode_arrays(arrays: dict) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())
    return out.getvalue()


def _decode_arrays(payload: bytes) -> dict:
    view = memoryview(payload)
    (count,) = struct.unpack_from("<I", view, 0)
    pos = 4
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos: pos + n]).decode()
        pos += n
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(view[pos: pos + 8 * size], dtype="<f8").astype(np.float64).reshape(shape)
        pos += 8 * size
    if pos != len(payload):
        raise ValueError("trailing bytes in array section")
    return arrays


def dumps(sections: dict) -> bytes:
    """Serialize ``{name: dict-of-json | dict-of-arrays}``.

    A section whose values are all numpy arrays is stored as arrays; any other
    mapping is stored as JSON.
    """
    body = io.BytesIO()
    body.write(MAGIC + struct.pack("<II", VERSION, len(sections)))
    for name, content in sections.items():
        is_arrays = bool(content) and all(isinstance(v, np.ndarray) for v in content.values())
        payload = _encode_arrays(content) if is_arrays else json.dumps(content, sort_keys=True).encode()
        raw = name.encode()
        body.write(struct.pack("<H", len(raw)) + raw)
        body.write(struct.pack("<BQI", KIND_ARRAYS if is_arrays else KIND_JSON, len(payload),
                               zlib.crc32(payload)))
        body.write(payload)
    data = body.getvalue()
    return data + hashlib.sha256(data).digest()


def loads(data: bytes) -> dict:
    if len(data) < 16 + 32 or data[:8] != MAGIC:
        raise IntegrityError("checkpoint header is corrupt or not a checkpoint (section 'header')")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version} (section 'header')")
    pos = 16
    end = len(data) - 32
    sections = {}
    name = "header"
    for index in range(count):
        try:
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2: pos + 2 + n].decode()
            pos += 2 + n
            kind, length, crc = struct.unpack_from("<BQI", data, pos)
            pos += 13
        except (struct.error, UnicodeDecodeError):
            raise IntegrityError(f"checkpoint section #{index} header is corrupt (after section {name!r})") from None
        payload = data[pos: pos + length]
        pos += length
        if pos > end or zlib.crc32(payload) != crc:
            raise IntegrityError(f"checkpoint section {name!r} failed its CRC check")
        try:
            sections[name] = _decode_arrays(payload) if kind == KIND_ARRAYS else json.loads(payload)
        except (ValueError, struct.error) as exc:
            raise IntegrityError(f"checkpoint section {name!r} could not be decoded: {exc}") from None
    if pos != end:
        raise IntegrityError("checkpoint has unexpected trailing bytes (section 'footer')")
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise IntegrityError("checkpoint whole-file checksum mismatch (section 'footer')")
    return sections


def save(path, sections: dict) -> None:
    """Write atomically via a temporary file in the same directory."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(sections))
    os.replace(tmp, path)


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())
