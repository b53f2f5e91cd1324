"""Key-value cache construction and prototype-based cache-size reduction.

A cache pairs the few-shot training features (keys, one row per cached
sample) with one-hot label rows (values). Shrinking the cache replaces each
class's samples by renormalized group means ("prototypes") over a seeded
random partition into equal-size groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding_store import (
    EmbeddingSet,
    UNIT_NORM_TOL,
    load_embeddings,
    normalize_rows,
    save_embeddings,
)
from .errors import (
    InvalidData,
    IoError,
    LabelOutOfRange,
    NotDivisible,
    NotNormalized,
    UnbalancedClasses,
)

DEFAULT_ALPHA = 1.0  # residual ratio
DEFAULT_BETA = 5.5   # sharpness ratio


def encode_onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot encode a label vector as a float64 matrix.

    Raises:
        LabelOutOfRange: any label outside [0, num_classes).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise InvalidData("labels must be a vector")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(labels[(labels < 0) | (labels >= num_classes)][0])
        raise LabelOutOfRange(f"label {bad} outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class CacheModel:
    """Immutable key matrix + value matrix with blending hyperparameters.

    Values are one-hot rows right after build_cache; unfreezing them during
    fine-tuning is an ablation that deliberately breaks that property, so
    one-hotness is enforced by the builder, not here. Key rows are unit
    norm after building but may drift during fine-tuning.
    """

    keys: np.ndarray
    values: np.ndarray
    class_names: tuple[str, ...]
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    shots_effective: int = 1

    def __post_init__(self):
        keys = np.asarray(self.keys)
        values = np.asarray(self.values)
        names = tuple(self.class_names)
        if keys.ndim != 2 or values.ndim != 2:
            raise InvalidData("keys and values must be 2-d matrices")
        if keys.shape[0] != values.shape[0]:
            raise InvalidData(
                f"keys have {keys.shape[0]} rows but values have {values.shape[0]}"
            )
        if values.shape[1] != len(names):
            raise InvalidData("values need one column per class name")
        if not (np.all(np.isfinite(keys)) and np.all(np.isfinite(values))):
            raise InvalidData("cache contains NaN or Inf")
        if self.alpha < 0:
            raise InvalidData(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise InvalidData(f"beta must be > 0, got {self.beta}")
        if self.shots_effective < 1:
            raise InvalidData("shots_effective must be >= 1")
        keys.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "class_names", names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @property
    def num_cached(self) -> int:
        return self.keys.shape[0]

    @property
    def labels(self) -> np.ndarray:
        """Class index of each cached row (argmax over the value row)."""
        return np.argmax(self.values, axis=1)

    def values_are_onehot(self) -> bool:
        v = self.values
        return bool(
            np.all((v == 0.0) | (v == 1.0)) and np.all(v.sum(axis=1) == 1.0)
        )

    def with_params(self, alpha: float | None = None, beta: float | None = None) -> "CacheModel":
        return CacheModel(
            self.keys,
            self.values,
            self.class_names,
            alpha=self.alpha if alpha is None else alpha,
            beta=self.beta if beta is None else beta,
            shots_effective=self.shots_effective,
        )


def _require_balanced(train: EmbeddingSet) -> int:
    counts = train.class_counts()
    expected = int(counts.max())
    for c, n in enumerate(counts):
        if n != expected:
            raise UnbalancedClasses(c, int(n), expected)
    return expected


def build_cache(
    train: EmbeddingSet,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> CacheModel:
    """Construct the key-value cache from a balanced, normalized training set.

    Keys are the training feature rows in their original order; values are
    the one-hot encodings of their labels.

    Raises:
        NotNormalized: training features are not flagged unit-norm.
        UnbalancedClasses: per-class sample counts differ.
    """
    if not train.normalized:
        raise NotNormalized("cache keys must be built from normalized features")
    shots = _require_balanced(train)
    values = encode_onehot(train.labels, train.num_classes)
    return CacheModel(
        train.features,
        values,
        train.class_names,
        alpha=alpha,
        beta=beta,
        shots_effective=shots,
    )


@dataclass(frozen=True)
class GroupingPlan:
    """Seeded per-class partition of sample indices into equal groups."""

    seed: int
    group_size: int
    assignment: tuple[tuple[tuple[int, ...], ...], ...]  # [class][group][member row]

    def __post_init__(self):
        for groups in self.assignment:
            members = [i for g in groups for i in g]
            if len(set(members)) != len(members):
                raise InvalidData("grouping reuses a sample index")
            if any(len(g) != self.group_size for g in groups):
                raise InvalidData("grouping has unequal group sizes")


def prototype_reduce(
    train: EmbeddingSet, target_shots: int, seed: int
) -> tuple[EmbeddingSet, GroupingPlan]:
    """Shrink a balanced K-shot set to target_shots prototypes per class.

    Each class's samples are randomly partitioned (seeded) into
    ``target_shots`` groups of K/target_shots; every prototype is the
    L2-renormalized mean of its group's normalized features. Groups of
    size 1 copy their row bit-exactly, so target_shots == K preserves the
    feature multiset.

    Raises:
        NotDivisible: K is not a multiple of target_shots.
    """
    if target_shots < 1:
        raise InvalidData("target_shots must be >= 1")
    if not train.normalized:
        raise NotNormalized("prototype averaging requires normalized features")
    per_class = _require_balanced(train)
    if per_class % target_shots != 0:
        raise NotDivisible(per_class, target_shots)
    group_size = per_class // target_shots

    rng = np.random.default_rng(seed)
    feats64 = train.features.astype(np.float64)
    proto_rows = []
    assignment = []
    for c in range(train.num_classes):
        idx = np.flatnonzero(train.labels == c)
        perm = rng.permutation(idx)
        groups = []
        for g in range(target_shots):
            members = perm[g * group_size : (g + 1) * group_size]
            groups.append(tuple(int(i) for i in members))
            if group_size == 1:
                proto_rows.append(train.features[members[0]])
            else:
                mean = feats64[members].mean(axis=0)
                proto_rows.append(
                    normalize_rows(mean[None, :])[0].astype(np.float32)
                )
        assignment.append(tuple(groups))

    features = np.stack(proto_rows)
    labels = np.repeat(np.arange(train.num_classes), target_shots)
    reduced = EmbeddingSet(features, labels, train.class_names, normalized=True)
    return reduced, GroupingPlan(seed, group_size, tuple(assignment))


def reduce_many_shots(train: EmbeddingSet, cache_size: int, seed: int) -> EmbeddingSet:
    """Compress a many-shot set into a fixed number of cached prototypes.

    Identical semantics to prototype_reduce with target_shots=cache_size;
    used to keep the cache at a fixed size when more shots are available.
    """
    reduced, _plan = prototype_reduce(train, cache_size, seed)
    return reduced


# --- persistence -------------------------------------------------------------


def cache_paths(stem) -> tuple[Path, Path, Path]:
    """Return the (keys, values, meta) file paths for a cache stem."""
    stem = Path(stem)
    return (
        stem.parent / (stem.name + ".keys.emb"),
        stem.parent / (stem.name + ".values.emb"),
        stem.parent / (stem.name + ".meta"),
    )


def save_cache(cache: CacheModel, stem, seed: int = 0, extra: dict | None = None) -> None:
    """Persist a cache as <stem>.keys.emb, <stem>.values.emb, <stem>.meta.

    The keys file stores key rows with their class labels; the values file
    stores the value matrix (redundant for one-hot caches, meaningful after
    a values-unfrozen fine-tune). The meta file holds UTF-8 key=value lines
    (alpha, beta, shots_effective, seed, plus any provenance extras).
    """
    stem = Path(stem)
    keys_path, values_path, meta_path = cache_paths(stem)
    labels = cache.labels
    keys32 = cache.keys.astype(np.float32)
    norms = np.linalg.norm(keys32.astype(np.float64), axis=1)
    keys_unit = bool(np.max(np.abs(norms - 1.0)) <= UNIT_NORM_TOL)
    save_embeddings(
        EmbeddingSet(keys32, labels, cache.class_names, normalized=keys_unit),
        keys_path,
    )
    save_embeddings(
        EmbeddingSet(
            cache.values.astype(np.float32), labels, cache.class_names, normalized=False
        ),
        values_path,
    )
    lines = {
        "alpha": repr(float(cache.alpha)),
        "beta": repr(float(cache.beta)),
        "shots_effective": str(cache.shots_effective),
        "seed": str(seed),
    }
    if extra:
        lines.update({k: str(v) for k, v in extra.items()})
    try:
        meta_path.write_text(
            "".join(f"{k}={v}\n" for k, v in lines.items()), encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write {meta_path}: {exc}") from exc


def load_cache(stem) -> tuple[CacheModel, dict[str, str]]:
    """Load a cache persisted by save_cache; returns (cache, meta dict)."""
    keys_path, values_path, meta_path = cache_paths(stem)
    keys_set = load_embeddings(keys_path)
    values_set = load_embeddings(values_path)
    try:
        meta_text = meta_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {meta_path}: {exc}") from exc
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    if keys_set.class_names != values_set.class_names:
        raise InvalidData(f"{stem}: keys and values files disagree on class names")
    if keys_set.rows != values_set.rows:
        raise InvalidData(f"{stem}: keys and values files disagree on row count")
    if not np.array_equal(keys_set.labels, values_set.labels):
        raise InvalidData(f"{stem}: keys and values files disagree on labels")
    try:
        alpha = float(meta["alpha"])
        beta = float(meta["beta"])
        shots_effective = int(meta["shots_effective"])
    except (KeyError, ValueError) as exc:
        raise InvalidData(f"{meta_path}: missing or malformed meta field: {exc}") from exc
    cache = CacheModel(
        keys_set.features,
        values_set.features,
        keys_set.class_names,
        alpha=alpha,
        beta=beta,
        shots_effective=shots_effective,
    )
    return cache, meta
