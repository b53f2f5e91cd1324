"""Reference classifiers: trained bottleneck adapter and linear probe.

The adapter baseline learns a two-layer ReLU bottleneck whose output is
mapped through the frozen text classifier and blended residually with the
raw zero-shot similarities. The linear probe is plain multinomial logistic
regression fit by full-batch gradient descent. Both exist for comparison
tables, not as the main method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding_store import EmbeddingSet, TextClassifier
from .errors import DimMismatch, InvalidData, NonFiniteGradient
from .finetune import Optimizer, TrainConfig, _softmax, cosine_lr, cross_entropy
from .inference import LogitsBatch, zero_shot_logits


@dataclass(frozen=True)
class MlpAdapter:
    """Two-layer ReLU bottleneck mapping features to feature-space residuals."""

    w1: np.ndarray  # hidden x dim
    b1: np.ndarray  # hidden
    w2: np.ndarray  # dim x hidden
    b2: np.ndarray  # dim
    alpha: float = 0.2

    def __post_init__(self):
        hidden, dim = self.w1.shape
        if hidden < 1:
            raise InvalidData("hidden width must be >= 1")
        if self.b1.shape != (hidden,) or self.w2.shape != (dim, hidden) or self.b2.shape != (dim,):
            raise InvalidData("adapter parameter shapes are inconsistent")
        for name, arr in (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)):
            if not np.all(np.isfinite(arr)):
                raise InvalidData(f"adapter {name} contains NaN or Inf")

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[1]


@dataclass(frozen=True)
class LinearProbe:
    """Multinomial logistic-regression weights over raw features."""

    weights: np.ndarray  # num_classes x dim
    bias: np.ndarray  # num_classes
    l2_lambda: float = 0.0

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidData("probe weights/bias shapes are inconsistent")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise InvalidData("probe parameters contain NaN or Inf")
        if self.l2_lambda < 0:
            raise InvalidData("l2_lambda must be >= 0")


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_clip_adapter(dim: int, hidden: int | None = None, alpha: float = 0.2, seed: int = 0) -> MlpAdapter:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.

    Hidden width defaults to dim // 4 (a conventional bottleneck reduction).
    """
    if hidden is None:
        hidden = max(1, dim // 4)
    rng = np.random.default_rng(seed)
    w1 = _uniform_init(rng, (hidden, dim), dim)
    b1 = _uniform_init(rng, (hidden,), dim)
    w2 = _uniform_init(rng, (dim, hidden), hidden)
    b2 = _uniform_init(rng, (dim,), hidden)
    return MlpAdapter(w1, b1, w2, b2, alpha=alpha)


def _adapter_terms(feats: np.ndarray, adapter: MlpAdapter, clf_w: np.ndarray):
    pre = feats @ adapter.w1.astype(np.float64).T + adapter.b1.astype(np.float64)
    hidden = np.maximum(pre, 0.0)
    f_a = hidden @ adapter.w2.astype(np.float64).T + adapter.b2.astype(np.float64)
    adapted_term = f_a @ clf_w.T
    return pre, hidden, f_a, adapted_term


def clip_adapter_logits(
    test: EmbeddingSet, adapter: MlpAdapter, clf: TextClassifier
) -> LogitsBatch:
    """alpha * (adapter(f) . classifier) + zero-shot similarities.

    A zero-parameter adapter reduces exactly to the zero-shot logits.
    """
    if test.dim != adapter.dim or test.dim != clf.dim:
        raise DimMismatch(
            f"dims disagree: test {test.dim}, adapter {adapter.dim}, clf {clf.dim}"
        )
    feats = test.features.astype(np.float64)
    clf_w = clf.weights.astype(np.float64)
    _pre, _hidden, _f_a, adapted_term = _adapter_terms(feats, adapter, clf_w)
    clip_term = zero_shot_logits(test, clf)
    return LogitsBatch(adapter.alpha * adapted_term + clip_term, (adapted_term, clip_term))


def _adapter_loss_and_grad(
    feats: np.ndarray,
    labels: np.ndarray,
    params: dict[str, np.ndarray],
    alpha: float,
    clf_w: np.ndarray,
):
    """Cross-entropy loss and backprop through the two-layer adapter."""
    n = feats.shape[0]
    pre = feats @ params["w1"].T + params["b1"]
    hidden = np.maximum(pre, 0.0)
    f_a = hidden @ params["w2"].T + params["b2"]
    logits = alpha * (f_a @ clf_w.T) + feats @ clf_w.T
    loss = cross_entropy(logits, labels)

    g_logits = _softmax(logits)
    g_logits[np.arange(n), labels] -= 1.0
    g_logits /= n

    g_fa = alpha * (g_logits @ clf_w)
    grads = {
        "b2": g_fa.sum(axis=0),
        "w2": g_fa.T @ hidden,
    }
    g_hidden = g_fa @ params["w2"]
    g_pre = g_hidden * (pre > 0)
    grads["b1"] = g_pre.sum(axis=0)
    grads["w1"] = g_pre.T @ feats
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"adapter {name} gradient contains NaN or Inf")
    return loss, grads


def train_clip_adapter(
    train: EmbeddingSet,
    clf: TextClassifier,
    cfg: TrainConfig | None = None,
    alpha: float = 0.2,
    hidden: int | None = None,
) -> MlpAdapter:
    """Train the adapter baseline from a seeded random initialization.

    Defaults to 200 epochs (this baseline converges far slower than the
    cache-initialized fine-tune). Deterministic given cfg.seed: the same
    generator drives initialization and every epoch's shuffle.
    """
    if cfg is None:
        cfg = TrainConfig(epochs=200)
    if train.dim != clf.dim:
        raise DimMismatch(f"train dim {train.dim} != clf dim {clf.dim}")
    if hidden is None:
        hidden = max(1, train.dim // 4)

    rng = np.random.default_rng(cfg.seed)
    params = {
        "w1": _uniform_init(rng, (hidden, train.dim), train.dim),
        "b1": _uniform_init(rng, (hidden,), train.dim),
        "w2": _uniform_init(rng, (train.dim, hidden), hidden),
        "b2": _uniform_init(rng, (train.dim,), hidden),
    }
    feats = train.features.astype(np.float64)
    labels = train.labels
    clf_w = clf.weights.astype(np.float64)
    rows = train.rows
    steps_per_epoch = math.ceil(rows / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = Optimizer(params, cfg)

    step = 0
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(rows)
        for start in range(0, rows, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _loss, grads = _adapter_loss_and_grad(
                feats[idx], labels[idx], params, alpha, clf_w
            )
            lr = (
                cosine_lr(step, total_steps, cfg.base_lr)
                if cfg.schedule == "cosine"
                else cfg.base_lr
            )
            optimizer.step(grads, lr)
            step += 1
    return MlpAdapter(params["w1"], params["b1"], params["w2"], params["b2"], alpha=alpha)


def linear_probe_logits(test: EmbeddingSet, probe: LinearProbe) -> np.ndarray:
    if test.dim != probe.weights.shape[1]:
        raise DimMismatch(f"test dim {test.dim} != probe dim {probe.weights.shape[1]}")
    return test.features.astype(np.float64) @ probe.weights.T + probe.bias


def _probe_loss_and_grad(feats, labels, weights, bias, l2_lambda):
    n = feats.shape[0]
    logits = feats @ weights.T + bias
    loss = cross_entropy(logits, labels) + l2_lambda * float(np.sum(weights * weights))
    g_logits = _softmax(logits)
    g_logits[np.arange(n), labels] -= 1.0
    g_logits /= n
    g_w = g_logits.T @ feats + 2.0 * l2_lambda * weights
    g_b = g_logits.sum(axis=0)
    return loss, g_w, g_b


def train_linear_probe(
    train: EmbeddingSet,
    num_classes: int,
    l2_lambda: float = 0.0,
    cfg: TrainConfig | None = None,
) -> LinearProbe:
    """Fit multinomial logistic regression by full-batch gradient descent.

    Minimizes cross-entropy + l2_lambda * ||W||^2 (bias unpenalized) with a
    constant step size; cfg.epochs is the step budget and the loop stops
    early once the gradient norm drops below 1e-6. The objective is convex,
    so converged fits are initialization-independent.
    """
    if cfg is None:
        cfg = TrainConfig(epochs=2000, base_lr=0.5, schedule="constant")
    if num_classes != train.num_classes:
        raise DimMismatch(
            f"num_classes {num_classes} != training set's {train.num_classes}"
        )
    rng = np.random.default_rng(cfg.seed)
    weights = _uniform_init(rng, (num_classes, train.dim), train.dim)
    bias = np.zeros(num_classes)
    feats = train.features.astype(np.float64)
    labels = train.labels

    for _step in range(cfg.epochs):
        _loss, g_w, g_b = _probe_loss_and_grad(feats, labels, weights, bias, l2_lambda)
        grad_norm = math.sqrt(float(np.sum(g_w * g_w) + np.sum(g_b * g_b)))
        if grad_norm < 1e-6:
            break
        weights -= cfg.base_lr * g_w
        bias -= cfg.base_lr * g_b
    return LinearProbe(weights, bias, l2_lambda=l2_lambda)
