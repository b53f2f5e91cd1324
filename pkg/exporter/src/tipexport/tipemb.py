"""Standalone TIPEMB writer.

Layout (little-endian throughout): magic "TIPEMB1", u8 version (1),
u32 num_classes, u64 rows, u32 dim, u8 dtype (1 = float32), u8 normalized,
2 zero pad bytes, then per-class u16-length-prefixed UTF-8 names, then
rows x dim float32 features row-major, then rows u32 labels, then a u32
CRC32 of every preceding byte. This module shares no code with readers;
compatibility is proven by loading written files with an independent
implementation in the test suite.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import InvalidData, IoError

MAGIC = b"TIPEMB1"
VERSION = 1
DTYPE_FLOAT32 = 1


def _validated(features, labels, class_names):
    feats = np.ascontiguousarray(features, dtype="<f4")
    labs = np.ascontiguousarray(labels, dtype="<u4")
    names = tuple(class_names)
    if feats.ndim != 2:
        raise InvalidData(f"features must be 2-d, got shape {feats.shape}")
    if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
        raise InvalidData("need exactly one label per feature row")
    if len(names) < 1 or any(not n for n in names):
        raise InvalidData("class names must be non-empty strings")
    if labs.size and int(labs.max()) >= len(names):
        raise InvalidData(f"label {int(labs.max())} outside {len(names)} classes")
    if not np.all(np.isfinite(feats)):
        raise InvalidData("features contain NaN or Inf")
    return feats, labs, names


def encode_tipemb(features, labels, class_names, normalized: bool) -> bytes:
    feats, labs, names = _validated(features, labels, class_names)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<B", VERSION)
    buf += struct.pack("<IQI", len(names), feats.shape[0], feats.shape[1])
    buf += struct.pack("<BBxx", DTYPE_FLOAT32, 1 if normalized else 0)
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidData(f"class name too long ({len(raw)} bytes)")
        buf += struct.pack("<H", len(raw)) + raw
    buf += feats.tobytes(order="C")
    buf += labs.tobytes(order="C")
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def write_tipemb(path, features, labels, class_names, normalized: bool) -> Path:
    blob = encode_tipemb(features, labels, class_names, normalized)
    path = Path(path)
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_classifier(path, weights, class_names) -> Path:
    """Classifier file: one unit row per class, labels are the identity ramp."""
    weights = np.asarray(weights)
    if weights.ndim != 2 or weights.shape[0] != len(tuple(class_names)):
        raise InvalidData("classifier needs one weight row per class name")
    labels = np.arange(weights.shape[0], dtype="<u4")
    return write_tipemb(path, weights, labels, class_names, normalized=True)
