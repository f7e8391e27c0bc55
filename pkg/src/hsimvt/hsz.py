"""HSZ container files: framed binary rasters and model/PCA payloads.

Every file is framed the same way: an 8-byte magic, a 4-byte little-endian
unsigned header length, a UTF-8 JSON header, then a raw payload whose size
must match the header exactly.

Magics:
  HSZCUBE\\0  float32 raster, band-interleaved-by-pixel (row-major (H,W,B))
  HSZLBL\\0\\0  uint16 class-id raster, row-major
  HSZPCA\\0\\0  per-view PCA models, float64 payload
  HSZMDL\\0\\0  model checkpoint, float32 payload
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, PayloadLengthError

CUBE_MAGIC = b"HSZCUBE\0"
LABEL_MAGIC = b"HSZLBL\0\0"
PCA_MAGIC = b"HSZPCA\0\0"
MODEL_MAGIC = b"HSZMDL\0\0"


def write_framed(path, magic: bytes, header: dict, payload: bytes):
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(payload)


def read_framed(path, magic: bytes):
    """Return (header dict, payload bytes); validates magic and framing."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise FormatError(f"{path}: file too short for an HSZ frame")
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object")
    return header, raw[12 + hlen:]


def _require(header: dict, path, *keys):
    for key in keys:
        if key not in header:
            raise FormatError(f"{path}: header missing required key {key!r}")
    return [header[k] for k in keys]


def write_cube_raster(path, values: np.ndarray):
    """Write an (H, W, B) float raster as an HSZCUBE file."""
    if values.ndim != 3:
        raise ValueError(f"cube raster must be 3-D, got shape {values.shape}")
    h, w, b = values.shape
    header = {"height": h, "width": w, "bands": b, "dtype": "f32le", "order": "bip"}
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    write_framed(path, CUBE_MAGIC, header, payload)


def read_cube_raster(path):
    """Read an HSZCUBE file; returns (values (H,W,B) float32, header)."""
    header, payload = read_framed(path, CUBE_MAGIC)
    h, w, b = _require(header, path, "height", "width", "bands")
    if header.get("dtype") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    if header.get("order") != "bip":
        raise FormatError(f"{path}: unsupported order {header.get('order')!r}")
    expected = int(h) * int(w) * int(b) * 4
    if len(payload) != expected:
        raise PayloadLengthError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(int(h), int(w), int(b))
    return np.ascontiguousarray(values), header


def write_label_raster(path, ids: np.ndarray, num_classes: int):
    """Write an (H, W) class-id raster as an HSZLBL file."""
    if ids.ndim != 2:
        raise ValueError(f"label raster must be 2-D, got shape {ids.shape}")
    h, w = ids.shape
    header = {"height": h, "width": w, "classes": int(num_classes)}
    payload = np.ascontiguousarray(ids, dtype="<u2").tobytes()
    write_framed(path, LABEL_MAGIC, header, payload)


def read_label_raster(path):
    """Read an HSZLBL file; returns (ids (H,W) uint16, num_classes)."""
    header, payload = read_framed(path, LABEL_MAGIC)
    h, w, k = _require(header, path, "height", "width", "classes")
    expected = int(h) * int(w) * 2
    if len(payload) != expected:
        raise PayloadLengthError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    ids = np.frombuffer(payload, dtype="<u2").reshape(int(h), int(w))
    return np.ascontiguousarray(ids), int(k)
