"""RTF tensor container.

Layout of one record: ``b"RTF1"``, a little-endian uint32 header length,
a UTF-8 JSON header ``{"dtype", "shape", "name"}``, then raw little-endian
values in row-major order. A file may hold several records back to back.
"""
from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"RTF1"
_TO_NP = {"f32": "<f4", "f64": "<f8"}
_FROM_NP = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class RTFError(ValueError):
    pass


def encode(array: np.ndarray, name: str = "") -> bytes:
    array = np.asarray(array)
    if array.dtype not in _FROM_NP:
        array = array.astype(np.float32)
    code = _FROM_NP[array.dtype]
    header = json.dumps({"dtype": code, "shape": list(array.shape), "name": name},
                        separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(array, dtype=_TO_NP[code]).tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + body


def _decode_one(buf: memoryview, pos: int):
    if bytes(buf[pos:pos + 4]) != MAGIC:
        raise RTFError("bad magic bytes")
    if pos + 8 > len(buf):
        raise RTFError("truncated header")
    (hlen,) = struct.unpack("<I", buf[pos + 4:pos + 8])
    try:
        header = json.loads(bytes(buf[pos + 8:pos + 8 + hlen]).decode("utf-8"))
        dt = np.dtype(_TO_NP[header["dtype"]])
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise RTFError(f"bad header: {exc}") from None
    start = pos + 8 + hlen
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if start + nbytes > len(buf):
        raise RTFError("truncated payload")
    arr = np.frombuffer(buf[start:start + nbytes], dtype=dt).reshape(shape)
    return header.get("name", ""), arr.astype(dt.newbyteorder("="), copy=True), start + nbytes


def write(path, array: np.ndarray, name: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array, name))


def read(path) -> np.ndarray:
    return read_named(path)[1]


def read_named(path):
    buf = memoryview(_slurp(path))
    name, arr, _ = _decode_one(buf, 0)
    return name, arr


def write_many(path, arrays: Mapping[str, np.ndarray]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        for name, arr in arrays.items():
            fh.write(encode(arr, name))
    os.replace(tmp, path)


def read_many(path) -> dict[str, np.ndarray]:
    buf = memoryview(_slurp(path))
    out: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(buf):
        name, arr, pos = _decode_one(buf, pos)
        out[name] = arr
    if not out:
        raise RTFError("empty container")
    return out


def _slurp(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()
