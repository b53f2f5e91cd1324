"""Experiment layer: few-shot sampling, grid sweeps, ablations, and reports.

Every report row is an EvalReport; emitters serialize report tables to CSV
or JSON plus an index file mapping config hashes back to the inputs that
produced them. All sampling flows through seeded generators so any row can
be reproduced from its recorded config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .cache_model import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    CacheModel,
    build_cache,
    prototype_reduce,
    reduce_many_shots,
)
from .embedding_store import EmbeddingSet, TextClassifier
from .errors import (
    InsufficientSamples,
    InvalidData,
    LengthMismatch,
    NotNormalized,
)
from .finetune import TrainConfig, train
from .inference import blended_logits, predict, zero_shot_logits

ALPHA_GRID = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)
BETA_GRID = (1.5, 3.5, 5.5, 7.5, 9.5, 11.5)
CACHE_SIZE_GRID = (0, 1, 2, 4, 8, 16)
SHOTS_GRID = (16, 32, 64, 128)
ABLATIONS = ("alpha", "beta", "cache_size", "more_shots", "finetune_modules")

SELECTIONS = ("heldout_val", "train_set")


@dataclass(frozen=True)
class FewShotSpec:
    """How to draw a K-shot per-class training sample."""

    shots: int
    seed: int = 0
    source: str = "unspecified"

    def __post_init__(self):
        if self.shots < 1:
            raise InvalidData(f"shots must be >= 1, got {self.shots}")


@dataclass(frozen=True)
class SweepGrid:
    """Hyperparameter grid; values are sorted and deduplicated on construction."""

    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    selection: str = "heldout_val"

    def __post_init__(self):
        alphas = tuple(float(a) for a in np.unique(np.asarray(self.alphas, dtype=np.float64)))
        betas = tuple(float(b) for b in np.unique(np.asarray(self.betas, dtype=np.float64)))
        if not alphas or not betas:
            raise InvalidData("sweep grid must be non-empty")
        if not all(np.isfinite(alphas)) or not all(np.isfinite(betas)):
            raise InvalidData("sweep grid contains NaN or Inf")
        if min(alphas) < 0:
            raise InvalidData("alphas must be >= 0")
        if min(betas) <= 0:
            raise InvalidData("betas must be > 0")
        if self.selection not in SELECTIONS:
            raise InvalidData(f"selection must be one of {SELECTIONS}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)


@dataclass(frozen=True)
class EvalReport:
    """One evaluated setting; the unit row of every results table."""

    method: str
    shots: int
    alpha: float
    beta: float
    top1: float
    num_test: int
    seed: int
    train_time_s: float
    eval_time_s: float
    config_hash: str

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0:
            raise InvalidData(f"top1 must be in [0, 1], got {self.top1}")
        if self.num_test < 1:
            raise InvalidData("num_test must be >= 1")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _jsonable(obj):
    """Coerce numpy scalars/containers so hashing sees plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        return sorted(str(v) for v in obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def stable_hash(config: dict) -> str:
    """12-hex-digit digest of a config dict, independent of key order."""
    canon = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def data_fingerprint(data: EmbeddingSet | TextClassifier) -> str:
    """Content digest binding a report to the exact arrays it was run on."""
    h = hashlib.sha256()
    if isinstance(data, EmbeddingSet):
        h.update(data.features.tobytes())
        h.update(data.labels.tobytes())
    else:
        h.update(data.weights.tobytes())
    h.update("\x00".join(data.class_names).encode("utf-8"))
    return h.hexdigest()[:12]


def _per_class_indices(labels: np.ndarray, num_classes: int) -> list[np.ndarray]:
    return [np.flatnonzero(labels == c) for c in range(num_classes)]


def _subset(source: EmbeddingSet, rows: np.ndarray) -> EmbeddingSet:
    return EmbeddingSet(
        source.features[rows],
        source.labels[rows],
        source.class_names,
        normalized=source.normalized,
    )


def sample_fewshot(full_train: EmbeddingSet, spec: FewShotSpec) -> EmbeddingSet:
    """Draw exactly spec.shots rows per class, uniformly without replacement.

    One seeded permutation is consumed per class in class order, so the
    draw is deterministic. Selected rows keep ascending source order
    within each class.

    Raises:
        InsufficientSamples: some class has fewer rows than spec.shots.
    """
    rng = np.random.default_rng(spec.seed)
    picks = []
    for c, idx in enumerate(_per_class_indices(full_train.labels, full_train.num_classes)):
        if idx.size < spec.shots:
            raise InsufficientSamples(c, int(idx.size), spec.shots)
        perm = rng.permutation(idx.size)
        picks.append(np.sort(idx[perm[: spec.shots]]))
    return _subset(full_train, np.concatenate(picks))


def split_train_val(
    pool: EmbeddingSet, spec: FewShotSpec, val_per_class: int | None = None
) -> tuple[EmbeddingSet, EmbeddingSet | None]:
    """Split a pool into K training shots plus a disjoint validation sample.

    The training half equals sample_fewshot(pool, spec) exactly (same
    generator stream). Validation takes min(shots, 4) spare rows per class
    by default; if any class lacks enough spares the validation half is
    None and the caller should fall back to selecting on the training set.
    """
    if val_per_class is None:
        val_per_class = min(spec.shots, 4)
    rng = np.random.default_rng(spec.seed)
    train_rows, val_rows = [], []
    have_val = True
    for c, idx in enumerate(_per_class_indices(pool.labels, pool.num_classes)):
        if idx.size < spec.shots:
            raise InsufficientSamples(c, int(idx.size), spec.shots)
        perm = rng.permutation(idx.size)
        train_rows.append(np.sort(idx[perm[: spec.shots]]))
        spare = idx[perm[spec.shots : spec.shots + val_per_class]]
        if spare.size < val_per_class:
            have_val = False
        else:
            val_rows.append(np.sort(spare))
    train_set = _subset(pool, np.concatenate(train_rows))
    val_set = _subset(pool, np.concatenate(val_rows)) if have_val else None
    return train_set, val_set


def top1_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of exact prediction matches.

    Raises:
        LengthMismatch: inputs differ in length or are empty.
    """
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.shape != labels.shape or pred.size == 0:
        raise LengthMismatch(
            f"predictions ({pred.shape}) and labels ({labels.shape}) must match and be non-empty"
        )
    return float(np.mean(pred == labels))


def _eval_cache(test: EmbeddingSet, cache: CacheModel, clf: TextClassifier) -> float:
    return top1_accuracy(predict(blended_logits(test, cache, clf)), test.labels)


def _grid_accuracies(
    sel: EmbeddingSet,
    cache: CacheModel,
    clf: TextClassifier,
    alphas: tuple[float, ...],
    betas: tuple[float, ...],
) -> np.ndarray:
    """Accuracy matrix [alpha, beta], sharing the similarity matrix per beta."""
    if not sel.normalized:
        raise NotNormalized("sweep selection split must hold normalized features")
    feats = sel.features.astype(np.float64)
    sims = feats @ cache.keys.astype(np.float64).T
    clip_term = feats @ clf.weights.astype(np.float64).T
    values = cache.values.astype(np.float64)
    accs = np.zeros((len(alphas), len(betas)))
    for j, beta in enumerate(betas):
        cache_term = np.exp(-beta * (1.0 - sims)) @ values
        for i, alpha in enumerate(alphas):
            pred = predict(alpha * cache_term + clip_term)
            accs[i, j] = top1_accuracy(pred, sel.labels)
    return accs


def sweep(
    train_set: EmbeddingSet,
    val: EmbeddingSet | None,
    test: EmbeddingSet,
    clf: TextClassifier,
    grid: SweepGrid,
    seed: int = 0,
) -> tuple[float, float, EvalReport]:
    """Pick (alpha, beta) on the selection split, then evaluate once on test.

    Ties break toward smaller alpha, then smaller beta; the grid is sorted
    at construction, so the selected pair does not depend on input order.
    When selection is heldout_val but no val split exists, selection falls
    back to the training set: a leakage-free but optimistic choice, flagged
    loudly via a warning and a "selection" marker in the report config.
    """
    t0 = time.perf_counter()
    cache = build_cache(train_set)
    if grid.selection == "train_set":
        sel, selection_used = train_set, "train_set"
    elif val is not None:
        sel, selection_used = val, "heldout_val"
    else:
        warnings.warn(
            "sweep: no validation split available; selecting hyperparameters "
            "on the training set (accuracy estimates may be optimistic)",
            stacklevel=2,
        )
        sel, selection_used = train_set, "train_set_fallback"

    accs = _grid_accuracies(sel, cache, clf, grid.alphas, grid.betas)
    best_i, best_j, best_acc = 0, 0, -1.0
    for i in range(len(grid.alphas)):
        for j in range(len(grid.betas)):
            if accs[i, j] > best_acc:
                best_i, best_j, best_acc = i, j, accs[i, j]
    best_alpha, best_beta = grid.alphas[best_i], grid.betas[best_j]
    train_time = time.perf_counter() - t0

    t1 = time.perf_counter()
    tuned = cache.with_params(alpha=best_alpha, beta=best_beta)
    top1 = _eval_cache(test, tuned, clf)
    eval_time = time.perf_counter() - t1

    config = {
        "method": "tip_sweep",
        "alphas": grid.alphas,
        "betas": grid.betas,
        "selection": selection_used,
        "alpha": best_alpha,
        "beta": best_beta,
        "shots": cache.shots_effective,
        "seed": seed,
        "train_data": data_fingerprint(train_set),
        "test_data": data_fingerprint(test),
        "clf_data": data_fingerprint(clf),
    }
    report = EvalReport(
        method="tip_sweep",
        shots=cache.shots_effective,
        alpha=best_alpha,
        beta=best_beta,
        top1=top1,
        num_test=test.rows,
        seed=seed,
        train_time_s=train_time,
        eval_time_s=eval_time,
        config_hash=stable_hash(config),
    )
    return best_alpha, best_beta, report


def _make_report(
    method: str,
    shots: int,
    alpha: float,
    beta: float,
    top1: float,
    num_test: int,
    seed: int,
    train_time: float,
    eval_time: float,
    extra_config: dict,
) -> EvalReport:
    config = {
        "method": method,
        "shots": shots,
        "alpha": alpha,
        "beta": beta,
        "seed": seed,
        **extra_config,
    }
    return EvalReport(
        method=method,
        shots=shots,
        alpha=alpha,
        beta=beta,
        top1=top1,
        num_test=num_test,
        seed=seed,
        train_time_s=train_time,
        eval_time_s=eval_time,
        config_hash=stable_hash(config),
    )


def run_ablation(
    name: str,
    train_set: EmbeddingSet,
    test: EmbeddingSet,
    clf: TextClassifier,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    division_seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    seed: int = 0,
    cfg: TrainConfig | None = None,
) -> list[EvalReport]:
    """Run one named sensitivity study and return its table of report rows.

    Grids:
      alpha            blend weight over ALPHA_GRID at fixed beta
      beta             kernel sharpness over BETA_GRID at fixed alpha
      cache_size       prototypes per class over CACHE_SIZE_GRID, averaged
                       over division_seeds; size 0 is exactly zero-shot
      more_shots       K over SHOTS_GRID sampled from train_set (the pool),
                       each compressed to a fixed cache of 16 per class
      finetune_modules a training-free row plus one fine-tuned row per
                       unfreeze choice: keys, values, both
    """
    if name not in ABLATIONS:
        raise InvalidData(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
    fingerprints = {
        "train_data": data_fingerprint(train_set),
        "test_data": data_fingerprint(test),
        "clf_data": data_fingerprint(clf),
    }
    reports: list[EvalReport] = []

    if name == "alpha":
        t0 = time.perf_counter()
        cache = build_cache(train_set, alpha=alpha, beta=beta)
        build_time = time.perf_counter() - t0
        for a in ALPHA_GRID:
            t1 = time.perf_counter()
            top1 = _eval_cache(test, cache.with_params(alpha=a), clf)
            reports.append(
                _make_report(
                    "tip", cache.shots_effective, a, beta, top1, test.rows, seed,
                    build_time, time.perf_counter() - t1,
                    {"ablation": "alpha", **fingerprints},
                )
            )

    elif name == "beta":
        t0 = time.perf_counter()
        cache = build_cache(train_set, alpha=alpha, beta=beta)
        build_time = time.perf_counter() - t0
        for b in BETA_GRID:
            t1 = time.perf_counter()
            top1 = _eval_cache(test, cache.with_params(beta=b), clf)
            reports.append(
                _make_report(
                    "tip", cache.shots_effective, alpha, b, top1, test.rows, seed,
                    build_time, time.perf_counter() - t1,
                    {"ablation": "beta", **fingerprints},
                )
            )

    elif name == "cache_size":
        per_class = min(train_set.class_counts())
        for size in CACHE_SIZE_GRID:
            extra = {"ablation": "cache_size", "cache_size": size, **fingerprints}
            if size == 0:
                t1 = time.perf_counter()
                top1 = top1_accuracy(predict(zero_shot_logits(test, clf)), test.labels)
                reports.append(
                    _make_report(
                        "tip", 0, alpha, beta, top1, test.rows, seed,
                        0.0, time.perf_counter() - t1, extra,
                    )
                )
                continue
            if per_class % size != 0:
                continue  # grid point not realizable from this K
            t0 = time.perf_counter()
            accs = []
            for div_seed in division_seeds:
                reduced, _plan = prototype_reduce(train_set, size, div_seed)
                cache = build_cache(reduced, alpha=alpha, beta=beta)
                accs.append(_eval_cache(test, cache, clf))
            elapsed = time.perf_counter() - t0
            reports.append(
                _make_report(
                    "tip", size, alpha, beta, float(np.mean(accs)), test.rows, seed,
                    0.0, elapsed,
                    {**extra, "division_seeds": division_seeds},
                )
            )

    elif name == "more_shots":
        cache_size = 16
        for k in SHOTS_GRID:
            t0 = time.perf_counter()
            shots_set = sample_fewshot(train_set, FewShotSpec(k, seed, "pool"))
            reduced = reduce_many_shots(shots_set, cache_size, division_seeds[0])
            cache = build_cache(reduced, alpha=alpha, beta=beta)
            build_time = time.perf_counter() - t0
            t1 = time.perf_counter()
            top1 = _eval_cache(test, cache, clf)
            reports.append(
                _make_report(
                    "tip", k, alpha, beta, top1, test.rows, seed,
                    build_time, time.perf_counter() - t1,
                    {
                        "ablation": "more_shots",
                        "cache_size": cache_size,
                        "division_seed": division_seeds[0],
                        **fingerprints,
                    },
                )
            )

    else:  # finetune_modules
        if cfg is None:
            cfg = TrainConfig(seed=seed)
        base_cache = build_cache(train_set, alpha=alpha, beta=beta)
        t1 = time.perf_counter()
        top1 = _eval_cache(test, base_cache, clf)
        reports.append(
            _make_report(
                "tip", base_cache.shots_effective, alpha, beta, top1, test.rows, seed,
                0.0, time.perf_counter() - t1,
                {"ablation": "finetune_modules", "unfreeze": [], **fingerprints},
            )
        )
        for unfreeze in ({"keys"}, {"values"}, {"keys", "values"}):
            run_cfg = dataclasses.replace(cfg, unfreeze=frozenset(unfreeze))
            t0 = time.perf_counter()
            tuned, _trace = train(train_set, base_cache, clf, run_cfg)
            train_time = time.perf_counter() - t0
            t1 = time.perf_counter()
            top1 = _eval_cache(test, tuned, clf)
            reports.append(
                _make_report(
                    "tip_f_" + "_".join(sorted(unfreeze)),
                    base_cache.shots_effective, alpha, beta, top1, test.rows, seed,
                    train_time, time.perf_counter() - t1,
                    {
                        "ablation": "finetune_modules",
                        "unfreeze": sorted(unfreeze),
                        "epochs": run_cfg.epochs,
                        "batch_size": run_cfg.batch_size,
                        "base_lr": run_cfg.base_lr,
                        "optimizer": run_cfg.optimizer,
                        **fingerprints,
                    },
                )
            )

    return reports


# --- report emission ----------------------------------------------------------

REPORT_FIELDS = (
    "method", "shots", "alpha", "beta", "top1",
    "num_test", "seed", "train_time_s", "eval_time_s", "config_hash",
)


def reports_to_csv(reports: list[EvalReport]) -> str:
    """CSV table; numeric fields at full repr precision, one row per report."""
    lines = [",".join(REPORT_FIELDS)]
    for r in reports:
        d = r.as_dict()
        lines.append(",".join(repr(d[f]) if isinstance(d[f], float) else str(d[f]) for f in REPORT_FIELDS))
    return "\n".join(lines) + "\n"


def reports_to_json(reports: list[EvalReport]) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2) + "\n"


def write_reports(reports: list[EvalReport], path, fmt: str = "csv") -> None:
    if fmt not in ("csv", "json"):
        raise InvalidData(f"format must be csv or json, got {fmt!r}")
    text = reports_to_csv(reports) if fmt == "csv" else reports_to_json(reports)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def write_report_index(index: dict[str, dict], path) -> None:
    """Persist the config-hash -> inputs map next to an emitted report table."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(index), fh, indent=2, sort_keys=True)
        fh.write("\n")
