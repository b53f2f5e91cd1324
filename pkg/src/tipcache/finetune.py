"""Gradient-based refinement of the cache keys (and optionally values).

The default recipe unfreezes only the key matrix: values are one-hot label
memories and the zero-shot classifier stays frozen, so training adjusts how
affinities are estimated without touching what is retrieved. Keys are not
projected back to the unit sphere, so their norms drift during training.

Everything runs in float64 with a fixed reduction order; identical inputs,
config, and seed give bit-identical results.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cache_model import CacheModel
from .embedding_store import EmbeddingSet, TextClassifier
from .errors import (
    DimMismatch,
    InvalidData,
    LabelOutOfRange,
    NonFiniteGradient,
    NonFiniteLogit,
    StepOutOfRange,
)

SCHEDULES = ("cosine", "constant")
OPTIMIZERS = ("sgd", "sgd_momentum", "adam")
UNFREEZABLE = frozenset({"keys", "values"})


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for fine-tuning runs.

    base_lr == 0 is allowed (a zero-step run leaves parameters untouched,
    which the test suite relies on as a degenerate case).
    """

    epochs: int = 20
    batch_size: int = 256
    base_lr: float = 0.001
    schedule: str = "cosine"
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    unfreeze: frozenset[str] = frozenset({"keys"})

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidData(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidData(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0:
            raise InvalidData(f"base_lr must be >= 0, got {self.base_lr}")
        if self.schedule not in SCHEDULES:
            raise InvalidData(f"schedule must be one of {SCHEDULES}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidData(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidData("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidData("weight_decay must be >= 0")
        unfreeze = frozenset(self.unfreeze)
        if not unfreeze or not unfreeze <= UNFREEZABLE:
            raise InvalidData(f"unfreeze must be a non-empty subset of {set(UNFREEZABLE)}")
        object.__setattr__(self, "unfreeze", unfreeze)


@dataclass(frozen=True)
class TrainTrace:
    """Per-epoch training record; all tuples share the epoch count."""

    losses: tuple[float, ...]
    lrs: tuple[float, ...]
    train_accs: tuple[float, ...]
    seconds: tuple[float, ...]

    def __post_init__(self):
        n = len(self.losses)
        if not (len(self.lrs) == len(self.train_accs) == len(self.seconds) == n):
            raise InvalidData("trace columns must have equal length")

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,lr,train_acc,seconds\n")
            for i in range(self.epochs):
                fh.write(
                    f"{i},{self.losses[i]:.10g},{self.lrs[i]:.10g},"
                    f"{self.train_accs[i]:.6f},{self.seconds[i]:.4f}\n"
                )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax of the true class, max-stabilized float64."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise InvalidData("logits must be 2-d with one label per row")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteLogit("logits contain NaN or Inf")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelOutOfRange("label outside logit columns")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(labels)), labels]))


def _forward_backward(
    feats: np.ndarray,
    labels: np.ndarray,
    keys: np.ndarray,
    values: np.ndarray,
    clf_weights: np.ndarray,
    alpha: float,
    beta: float,
    unfreeze: frozenset[str],
):
    """Shared gradient engine over raw float64 arrays.

    Returns (loss, grad_keys | None, grad_values | None). The activation
    derivative is beta * phi, so beta == 0 or alpha == 0 zeroes grad_keys
    exactly.
    """
    n = feats.shape[0]
    sims = feats @ keys.T
    aff = np.exp(-beta * (1.0 - sims))
    logits = alpha * (aff @ values) + feats @ clf_weights.T
    loss = cross_entropy(logits, labels)

    g_logits = _softmax(logits)
    g_logits[np.arange(n), labels] -= 1.0
    g_logits /= n

    grad_keys = None
    grad_values = None
    if "keys" in unfreeze:
        g_aff = alpha * (g_logits @ values.T)
        g_sims = g_aff * (beta * aff)
        grad_keys = g_sims.T @ feats
        if not np.all(np.isfinite(grad_keys)):
            raise NonFiniteGradient("key gradient contains NaN or Inf")
    if "values" in unfreeze:
        grad_values = alpha * (aff.T @ g_logits)
        if not np.all(np.isfinite(grad_values)):
            raise NonFiniteGradient("value gradient contains NaN or Inf")
    return loss, grad_keys, grad_values


def loss_and_grad(
    batch: EmbeddingSet,
    cache: CacheModel,
    clf: TextClassifier,
    unfreeze: frozenset[str] = frozenset({"keys"}),
):
    """Loss and analytic gradients of the blended logits' cross-entropy.

    Gradients are returned only for unfrozen blocks; frozen slots are None.
    """
    if batch.dim != cache.dim or batch.dim != clf.dim:
        raise DimMismatch(
            f"dims disagree: batch {batch.dim}, cache {cache.dim}, clf {clf.dim}"
        )
    unfreeze = frozenset(unfreeze)
    if not unfreeze <= UNFREEZABLE:
        raise InvalidData(f"unfreeze must be a subset of {set(UNFREEZABLE)}")
    return _forward_backward(
        batch.features.astype(np.float64),
        batch.labels,
        cache.keys.astype(np.float64),
        cache.values.astype(np.float64),
        clf.weights.astype(np.float64),
        cache.alpha,
        cache.beta,
        unfreeze,
    )


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr toward 0 over total_steps."""
    if not 0 <= step < total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Optimizer:
    """Plain SGD / SGD with momentum / Adam over a dict of float64 arrays.

    Kept deliberately tiny; state arrays are keyed like the parameters.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_m = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in params.items()}
        self.adam_t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        if cfg.optimizer == "adam":
            self.adam_t += 1
        for name, grad in grads.items():
            p = self.params[name]
            if cfg.weight_decay > 0:
                grad = grad + cfg.weight_decay * p
            if cfg.optimizer == "sgd":
                p -= lr * grad
            elif cfg.optimizer == "sgd_momentum":
                v = self.velocity[name]
                v *= cfg.momentum
                v += grad
                p -= lr * v
            else:  # adam
                m, v = self.adam_m[name], self.adam_v[name]
                m *= 0.9
                m += 0.1 * grad
                v *= 0.999
                v += 0.001 * grad * grad
                m_hat = m / (1.0 - 0.9 ** self.adam_t)
                v_hat = v / (1.0 - 0.999 ** self.adam_t)
                p -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def train(
    train_set: EmbeddingSet,
    cache: CacheModel,
    clf: TextClassifier,
    cfg: TrainConfig,
) -> tuple[CacheModel, TrainTrace]:
    """Fine-tune the unfrozen cache blocks on the few-shot training set.

    The cosine schedule is stepped per iteration over
    epochs * ceil(rows / batch_size) total steps. The final partial batch
    is kept and weighted by its true size in the epoch-mean loss. Frozen
    blocks are returned bit-identical; unfrozen blocks are trained in
    float64 and cast back to their original dtype.
    """
    if train_set.dim != cache.dim or train_set.dim != clf.dim:
        raise DimMismatch(
            f"dims disagree: train {train_set.dim}, cache {cache.dim}, clf {clf.dim}"
        )
    if train_set.num_classes != cache.num_classes:
        raise DimMismatch("training set and cache disagree on class count")

    feats = train_set.features.astype(np.float64)
    labels = train_set.labels
    clf_w = clf.weights.astype(np.float64)
    rows = train_set.rows
    steps_per_epoch = math.ceil(rows / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    params = {}
    if "keys" in cfg.unfreeze:
        params["keys"] = cache.keys.astype(np.float64)
    if "values" in cfg.unfreeze:
        params["values"] = cache.values.astype(np.float64)
    keys64 = params.get("keys", cache.keys.astype(np.float64))
    values64 = params.get("values", cache.values.astype(np.float64))
    optimizer = Optimizer(params, cfg)

    rng = np.random.default_rng(cfg.seed)
    losses, lrs, accs, seconds = [], [], [], []
    step = 0
    for _epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(rows)
        epoch_loss = 0.0
        epoch_lr = None
        for start in range(0, rows, cfg.batch_size):
            batch_idx = perm[start : start + cfg.batch_size]
            loss, g_keys, g_values = _forward_backward(
                feats[batch_idx],
                labels[batch_idx],
                keys64,
                values64,
                clf_w,
                cache.alpha,
                cache.beta,
                cfg.unfreeze,
            )
            lr = (
                cosine_lr(step, total_steps, cfg.base_lr)
                if cfg.schedule == "cosine"
                else cfg.base_lr
            )
            if epoch_lr is None:
                epoch_lr = lr
            grads = {}
            if g_keys is not None:
                grads["keys"] = g_keys
            if g_values is not None:
                grads["values"] = g_values
            optimizer.step(grads, lr)
            epoch_loss += loss * len(batch_idx)
            step += 1
        sims = feats @ keys64.T
        logits = cache.alpha * (np.exp(-cache.beta * (1.0 - sims)) @ values64)
        logits += feats @ clf_w.T
        accs.append(float(np.mean(np.argmax(logits, axis=1) == labels)))
        losses.append(epoch_loss / rows)
        lrs.append(epoch_lr)
        seconds.append(time.perf_counter() - t0)

    new_keys = (
        keys64.astype(cache.keys.dtype) if "keys" in cfg.unfreeze else cache.keys
    )
    new_values = (
        values64.astype(cache.values.dtype) if "values" in cfg.unfreeze else cache.values
    )
    tuned = CacheModel(
        new_keys,
        new_values,
        cache.class_names,
        alpha=cache.alpha,
        beta=cache.beta,
        shots_effective=cache.shots_effective,
    )
    trace = TrainTrace(tuple(losses), tuple(lrs), tuple(accs), tuple(seconds))
    return tuned, trace
