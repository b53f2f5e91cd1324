"""Embedding datasets, text-classifier weights, and the TIPEMB on-disk format.

TIPEMB layout (little-endian throughout):

    bytes 0-6   magic "TIPEMB1"
    byte  7     version (u8, = 1)
    u32         num_classes
    u64         rows
    u32         dim
    u8          dtype code (1 = float32)
    u8          normalized flag (0/1)
    2 bytes     zero padding
    per class   u16 byte-length + UTF-8 class name
    rows x dim  float32 features, row-major
    rows        u32 labels
    u32         CRC32 of all preceding bytes

Text classifiers reuse the layout with rows == num_classes and the labels
block holding 0..num_classes-1 in order.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CrcMismatch,
    DimTooSmall,
    InvalidData,
    IoError,
    LabelOutOfRange,
    NonFiniteValue,
    NotNormalized,
    TruncatedFile,
    ZeroNormRow,
)

MAGIC = b"TIPEMB1"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1
UNIT_NORM_TOL = 1e-4

_HEADER = struct.Struct("<IQIBB2s")  # num_classes, rows, dim, dtype, normalized, pad


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale every row of ``m`` to unit Euclidean norm.

    Norms are accumulated in float64 regardless of input dtype; the result
    keeps the input dtype. Rows with norm <= 1e-12 indicate corrupt input
    and raise rather than being silently patched.

    Raises:
        ZeroNormRow: index of the first degenerate row.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise InvalidData(f"expected a 2-d matrix, got shape {m.shape}")
    norms = np.linalg.norm(m.astype(np.float64, copy=False), axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise ZeroNormRow(int(bad[0]))
    out = m.astype(np.float64, copy=False) / norms[:, None]
    return out.astype(m.dtype, copy=False)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")


def _check_unit_rows(a: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(a.astype(np.float64, copy=False), axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > UNIT_NORM_TOL:
        raise NotNormalized(f"{what} row norms deviate from 1 by up to {worst:.3g}")


def _check_names(class_names: tuple[str, ...]) -> None:
    if len(set(class_names)) != len(class_names):
        raise InvalidData("duplicate class names")


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable matrix of float32 embedding rows with integer class labels.

    ``normalized`` asserts that every row is unit length within 1e-4; it is
    validated at construction so downstream code can rely on the flag.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        names = tuple(self.class_names)
        if features.ndim != 2:
            raise InvalidData(f"features must be 2-d, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InvalidData("labels must be a vector with one entry per feature row")
        if features.shape[0] < 1:
            raise InvalidData("need at least one row")
        if len(names) < 2:
            raise InvalidData("need at least two classes")
        _check_names(names)
        _check_finite(features, "features")
        if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
            bad = int(labels[(labels < 0) | (labels >= len(names))][0])
            raise LabelOutOfRange(f"label {bad} outside [0, {len(names)})")
        if self.normalized:
            _check_unit_rows(features, "features")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class TextClassifier:
    """Per-class unit-norm weight rows acting as a linear classifier."""

    weights: np.ndarray
    class_names: tuple[str, ...]
    prompt_mode: str = "custom"  # single | ensemble7 | custom

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        names = tuple(self.class_names)
        if weights.ndim != 2:
            raise InvalidData(f"weights must be 2-d, got shape {weights.shape}")
        if weights.shape[0] != len(names) or len(names) < 1:
            raise InvalidData("one weight row per class name required")
        if self.prompt_mode not in ("single", "ensemble7", "custom"):
            raise InvalidData(f"unknown prompt_mode {self.prompt_mode!r}")
        _check_names(names)
        _check_finite(weights, "weights")
        _check_unit_rows(weights, "classifier weights")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "class_names", names)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


# --- TIPEMB codec ----------------------------------------------------------


def _encode_blob(
    features: np.ndarray,
    labels: np.ndarray,
    class_names: tuple[str, ...],
    normalized: bool,
) -> bytes:
    rows, dim = features.shape
    parts = [MAGIC, bytes([FORMAT_VERSION])]
    parts.append(
        _HEADER.pack(len(class_names), rows, dim, DTYPE_FLOAT32, int(normalized), b"\x00\x00")
    )
    for name in class_names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidData(f"class name longer than 65535 bytes: {name[:32]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(features, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    """Cursor over a fully-read file with truncation checks."""

    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedFile(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def _decode_blob(blob: bytes, path: Path):
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagic(f"{path}: not a TIPEMB file")
    version = r.take(1)[0]
    if version != FORMAT_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    num_classes, rows, dim, dtype, normalized, pad = _HEADER.unpack(r.take(_HEADER.size))
    if dtype != DTYPE_FLOAT32:
        raise BadMagic(f"{path}: unknown dtype code {dtype}")
    if pad != b"\x00\x00":
        raise BadMagic(f"{path}: nonzero padding bytes")
    names = []
    for i in range(num_classes):
        (nlen,) = struct.unpack("<H", r.take(2))
        raw = r.take(nlen)
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise InvalidData(f"{path}: class name {i} is not valid UTF-8") from exc
    feat_bytes = r.take(rows * dim * 4)
    label_bytes = r.take(rows * 4)
    (crc_stored,) = struct.unpack("<I", r.take(4))
    if r.pos != len(blob):
        raise TruncatedFile(f"{path}: {len(blob) - r.pos} trailing bytes after checksum")
    crc_actual = zlib.crc32(blob[: len(blob) - 4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise CrcMismatch(f"{path}: CRC32 {crc_actual:#010x} != stored {crc_stored:#010x}")
    features = np.frombuffer(feat_bytes, dtype="<f4").reshape(rows, dim)
    labels = np.frombuffer(label_bytes, dtype="<u4").astype(np.int64)
    return features, labels, tuple(names), bool(normalized)


def _read_file(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_file(path, blob: bytes) -> None:
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_embeddings(path) -> EmbeddingSet:
    """Read and validate a TIPEMB embedding file.

    Raises:
        IoError: file cannot be read.
        BadMagic, TruncatedFile, CrcMismatch: malformed file.
        LabelOutOfRange, NonFiniteValue, NotNormalized, InvalidData:
            contents violate EmbeddingSet invariants.
    """
    path = Path(path)
    features, labels, names, normalized = _decode_blob(_read_file(path), path)
    return EmbeddingSet(features, labels, names, normalized=normalized)


def save_embeddings(dataset: EmbeddingSet, path) -> None:
    """Write ``dataset`` so that load_embeddings round-trips it bit-exactly."""
    blob = _encode_blob(dataset.features, dataset.labels, dataset.class_names, dataset.normalized)
    _write_file(path, blob)


def load_classifier(path, prompt_mode: str = "custom") -> TextClassifier:
    """Read a text classifier stored in TIPEMB layout.

    The labels block must hold the identity ramp 0..num_classes-1.
    """
    path = Path(path)
    weights, labels, names, _normalized = _decode_blob(_read_file(path), path)
    if weights.shape[0] != len(names):
        raise InvalidData(f"{path}: classifier needs one row per class")
    if not np.array_equal(labels, np.arange(len(names))):
        raise InvalidData(f"{path}: classifier labels must be 0..{len(names) - 1} in order")
    return TextClassifier(weights, names, prompt_mode=prompt_mode)


def save_classifier(clf: TextClassifier, path) -> None:
    labels = np.arange(clf.num_classes, dtype=np.int64)
    _write_file(path, _encode_blob(clf.weights, labels, clf.class_names, True))


# --- synthetic data ---------------------------------------------------------


def synth_generate(
    num_classes: int,
    shots: int,
    test_per_class: int,
    dim: int,
    noise_sigma: float,
    classifier_misalignment: float,
    seed: int,
) -> tuple[EmbeddingSet, EmbeddingSet, TextClassifier]:
    """Generate a deterministic synthetic few-shot task.

    Class centroids are the coordinate basis vectors e_0..e_{N-1}, so the
    geometry is analytically predictable. Samples are unit-normalized
    ``centroid + N(0, noise_sigma^2)`` draws; classifier row c is the
    normalized mix ``(1-m) * e_c + m * g`` with g a standard normal vector
    and m the misalignment. All draws come from one seeded generator in a
    fixed order, so identical seeds give bit-identical outputs.

    Returns:
        (train, test, clf) with train/test rows grouped class-major.

    Raises:
        DimTooSmall: fewer dimensions than classes (centroids could not be
            mutually orthogonal).
    """
    if dim < num_classes:
        raise DimTooSmall(f"dim {dim} < num_classes {num_classes}")
    if noise_sigma < 0:
        raise InvalidData("noise_sigma must be >= 0")
    if not 0.0 <= classifier_misalignment <= 1.0:
        raise InvalidData("classifier_misalignment must be in [0, 1]")
    if shots < 1 or test_per_class < 1:
        raise InvalidData("shots and test_per_class must be >= 1")

    rng = np.random.default_rng(seed)
    train_noise = rng.standard_normal((num_classes * shots, dim))
    test_noise = rng.standard_normal((num_classes * test_per_class, dim))
    clf_noise = rng.standard_normal((num_classes, dim))

    centroids = np.eye(num_classes, dim)
    names = tuple(f"class_{c:03d}" for c in range(num_classes))

    def _sample_block(noise: np.ndarray, per_class: int) -> tuple[np.ndarray, np.ndarray]:
        reps = np.repeat(centroids, per_class, axis=0)
        feats = normalize_rows(reps + noise_sigma * noise).astype(np.float32)
        labels = np.repeat(np.arange(num_classes), per_class)
        return feats, labels

    train_feats, train_labels = _sample_block(train_noise, shots)
    test_feats, test_labels = _sample_block(test_noise, test_per_class)

    m = classifier_misalignment
    clf_rows = normalize_rows((1.0 - m) * centroids + m * clf_noise).astype(np.float32)

    train = EmbeddingSet(train_feats, train_labels, names, normalized=True)
    test = EmbeddingSet(test_feats, test_labels, names, normalized=True)
    clf = TextClassifier(clf_rows, names)
    return train, test, clf
