"""Training-free prediction over a key-value cache.

Two equivalent evaluation routes are kept deliberately separate so they can
cross-check each other:

* blended_logits composes the retrieval kernel explicitly: exponential
  affinities to the cached keys, affinity-weighted sum of one-hot values,
  residual blend with the zero-shot classifier.
* mlp_form_logits evaluates the same cache as a literal two-layer adapter
  (first layer weights = keys, second layer weights = transposed values,
  zero biases) followed by the same residual blend.

All accumulation happens in float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache_model import CacheModel
from .embedding_store import EmbeddingSet, TextClassifier
from .errors import DimMismatch, InvalidData, NonFiniteLogit, NotNormalized


@dataclass(frozen=True)
class LogitsBatch:
    """Per-row class logits, optionally with the (cache, zero-shot) split.

    When components are present, values == alpha * cache_term + clip_term
    with the alpha the batch was produced under.
    """

    values: np.ndarray
    components: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def cache_term(self) -> np.ndarray | None:
        return self.components[0] if self.components else None

    @property
    def clip_term(self) -> np.ndarray | None:
        return self.components[1] if self.components else None


def _f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check_test_set(test: EmbeddingSet, dim: int, what: str) -> None:
    if test.dim != dim:
        raise DimMismatch(f"test dim {test.dim} != {what} dim {dim}")
    if not test.normalized:
        raise NotNormalized("test features must be unit-normalized")


def affinities(test: EmbeddingSet, cache: CacheModel) -> np.ndarray:
    """Exponential query-key affinities exp(-beta * (1 - f . k)).

    For unit-norm keys the inner product lies in [-1, 1], so every affinity
    falls in (0, 1] with exact 1.0 at a perfect match.
    """
    _check_test_set(test, cache.dim, "cache key")
    sims = _f64(test.features) @ _f64(cache.keys).T
    return np.exp(-cache.beta * (1.0 - sims))


def cache_logits(test: EmbeddingSet, cache: CacheModel) -> np.ndarray:
    """Affinity-weighted sum of cached value rows (one column per class)."""
    return affinities(test, cache) @ _f64(cache.values)


def zero_shot_logits(test: EmbeddingSet, clf: TextClassifier) -> np.ndarray:
    """Cosine similarities between test rows and classifier rows."""
    _check_test_set(test, clf.dim, "classifier")
    return _f64(test.features) @ _f64(clf.weights).T


def blended_logits(
    test: EmbeddingSet, cache: CacheModel, clf: TextClassifier
) -> LogitsBatch:
    """Residual blend: alpha * cache retrieval + zero-shot similarities."""
    if cache.num_classes != clf.num_classes:
        raise DimMismatch(
            f"cache has {cache.num_classes} classes, classifier {clf.num_classes}"
        )
    cache_term = cache_logits(test, cache)
    clip_term = zero_shot_logits(test, clf)
    return LogitsBatch(cache.alpha * cache_term + clip_term, (cache_term, clip_term))


def _linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weight.T + bias


def mlp_form_logits(
    test: EmbeddingSet, cache: CacheModel, clf: TextClassifier
) -> LogitsBatch:
    """Evaluate the cache as an explicit two-layer adapter.

    Layer 1: weights = keys, bias = 0, activation exp(-beta * (1 - x)).
    Layer 2: weights = transposed values, bias = 0. The adapter output for
    one-hot values lands directly in class-logit space, so the blend is
    alpha * adapter_output + zero-shot term.
    """
    if cache.num_classes != clf.num_classes:
        raise DimMismatch(
            f"cache has {cache.num_classes} classes, classifier {clf.num_classes}"
        )
    _check_test_set(test, cache.dim, "cache key")
    f = _f64(test.features)
    w1 = _f64(cache.keys)
    b1 = np.zeros(w1.shape[0])
    w2 = _f64(cache.values).T
    b2 = np.zeros(w2.shape[0])

    pre = _linear(f, w1, b1)
    hidden = np.exp(-cache.beta * (1.0 - pre))
    adapted = _linear(hidden, w2, b2)
    clip_term = zero_shot_logits(test, clf)
    return LogitsBatch(cache.alpha * adapted + clip_term, (adapted, clip_term))


def predict(logits: LogitsBatch | np.ndarray) -> np.ndarray:
    """Per-row argmax with ties broken toward the lowest class index.

    Raises:
        NonFiniteLogit: any NaN or Inf entry.
    """
    values = logits.values if isinstance(logits, LogitsBatch) else np.asarray(logits)
    if values.ndim != 2:
        raise InvalidData(f"expected a 2-d logits matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteLogit("logits contain NaN or Inf")
    return np.argmax(values, axis=1)
