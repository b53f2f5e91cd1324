"""Training-free cache-model few-shot classification over precomputed embeddings.

A key-value cache built from a handful of labeled embeddings per class is
blended with a fixed text-derived classifier; optional fine-tuning updates
the cache keys while everything else stays frozen. Baselines, an
experiment harness, a binary embedding file format, and a CLI round out
the package.
"""

from .baselines import (
    LinearProbe,
    MlpAdapter,
    clip_adapter_logits,
    init_clip_adapter,
    linear_probe_logits,
    train_clip_adapter,
    train_linear_probe,
)
from .cache_model import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    CacheModel,
    GroupingPlan,
    build_cache,
    cache_paths,
    encode_onehot,
    load_cache,
    prototype_reduce,
    reduce_many_shots,
    save_cache,
)
from .embedding_store import (
    EmbeddingSet,
    TextClassifier,
    load_classifier,
    load_embeddings,
    normalize_rows,
    save_classifier,
    save_embeddings,
    synth_generate,
)
from .errors import TipCacheError
from .finetune import (
    TrainConfig,
    TrainTrace,
    cosine_lr,
    cross_entropy,
    loss_and_grad,
    train,
)
from .harness import (
    ABLATIONS,
    ALPHA_GRID,
    BETA_GRID,
    CACHE_SIZE_GRID,
    SHOTS_GRID,
    EvalReport,
    FewShotSpec,
    SweepGrid,
    data_fingerprint,
    reports_to_csv,
    reports_to_json,
    run_ablation,
    sample_fewshot,
    split_train_val,
    stable_hash,
    sweep,
    top1_accuracy,
    write_report_index,
    write_reports,
)
from .inference import (
    LogitsBatch,
    affinities,
    blended_logits,
    cache_logits,
    mlp_form_logits,
    predict,
    zero_shot_logits,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "ALPHA_GRID",
    "BETA_GRID",
    "CACHE_SIZE_GRID",
    "DEFAULT_ALPHA",
    "DEFAULT_BETA",
    "SHOTS_GRID",
    "CacheModel",
    "EmbeddingSet",
    "EvalReport",
    "FewShotSpec",
    "GroupingPlan",
    "LinearProbe",
    "LogitsBatch",
    "MlpAdapter",
    "SweepGrid",
    "TextClassifier",
    "TipCacheError",
    "TrainConfig",
    "TrainTrace",
    "affinities",
    "blended_logits",
    "build_cache",
    "cache_logits",
    "cache_paths",
    "clip_adapter_logits",
    "cosine_lr",
    "cross_entropy",
    "data_fingerprint",
    "encode_onehot",
    "init_clip_adapter",
    "linear_probe_logits",
    "load_cache",
    "load_classifier",
    "load_embeddings",
    "loss_and_grad",
    "mlp_form_logits",
    "normalize_rows",
    "predict",
    "prototype_reduce",
    "reduce_many_shots",
    "reports_to_csv",
    "reports_to_json",
    "run_ablation",
    "sample_fewshot",
    "save_cache",
    "save_classifier",
    "save_embeddings",
    "split_train_val",
    "stable_hash",
    "sweep",
    "synth_generate",
    "top1_accuracy",
    "train",
    "train_clip_adapter",
    "train_linear_probe",
    "write_report_index",
    "write_reports",
    "zero_shot_logits",
]
