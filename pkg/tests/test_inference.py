"""Kernel, retrieval, blending, dual-form, and prediction tests."""

import math

import numpy as np
import pytest

from tipcache import (
    CacheModel,
    EmbeddingSet,
    LogitsBatch,
    TextClassifier,
    affinities,
    blended_logits,
    build_cache,
    cache_logits,
    mlp_form_logits,
    normalize_rows,
    predict,
    synth_generate,
    zero_shot_logits,
)
from tipcache.errors import DimMismatch, InvalidData, NonFiniteLogit, NotNormalized


def basis_set(rows, dim, labels, names=None):
    feats = np.zeros((rows, dim), dtype=np.float32)
    for i in range(rows):
        feats[i, i % dim] = 1.0
    names = names or tuple(f"c{i}" for i in range(max(labels) + 1))
    return EmbeddingSet(feats, np.asarray(labels), names, normalized=True)


def random_task(seed, num_classes=5, shots=3, test_rows=4, dim=12):
    train, test, clf = synth_generate(num_classes, shots, 1, dim, 0.4, 0.5, seed)
    rng = np.random.default_rng(seed + 1000)
    feats = normalize_rows(rng.standard_normal((test_rows, dim)).astype(np.float32))
    queries = EmbeddingSet(
        feats, rng.integers(0, num_classes, test_rows), train.class_names, normalized=True
    )
    return train, queries, clf


# --- affinities -----------------------------------------------------------------


def test_affinity_self_match_is_exactly_one():
    # coordinate basis rows make the inner product exactly 1.0 in float64
    train = basis_set(2, 4, [0, 1])
    cache = build_cache(train, beta=5.5)
    a = affinities(train, cache)
    assert a[0, 0] == 1.0 and a[1, 1] == 1.0


def test_affinity_orthogonal_pair_matches_exp_minus_beta():
    train = basis_set(2, 4, [0, 1])
    cache = build_cache(train, beta=5.5)
    a = affinities(train, cache)
    assert abs(a[0, 1] - math.exp(-5.5)) < 1e-9
    assert abs(a[1, 0] - math.exp(-5.5)) < 1e-9


def test_affinity_entries_in_unit_interval_for_unit_keys():
    train, queries, _clf = random_task(3)
    a = affinities(queries, build_cache(train, beta=7.0))
    assert np.all(a > 0.0) and np.all(a <= 1.0)


def test_affinity_matches_scalar_loop_oracle():
    """Entry-by-entry recomputation with python floats, no matmul library."""
    train, queries, _clf = random_task(11, num_classes=4, shots=1, test_rows=3, dim=6)
    beta = 4.25
    cache = build_cache(train, beta=beta)
    got = affinities(queries, cache)
    f = queries.features.astype(np.float64)
    k = cache.keys.astype(np.float64)
    for i in range(f.shape[0]):
        for j in range(k.shape[0]):
            dot = 0.0
            for d in range(f.shape[1]):
                dot += float(f[i, d]) * float(k[j, d])
            expected = math.exp(-beta * (1.0 - dot))
            assert abs(got[i, j] - expected) < 1e-6


def test_affinity_dim_mismatch():
    train, _q, _c = random_task(0, dim=12)
    other = basis_set(2, 8, [0, 1])
    with pytest.raises(DimMismatch):
        affinities(other, build_cache(train))


def test_affinity_requires_normalized_queries():
    train, _q, _c = random_task(0)
    raw = EmbeddingSet(
        np.full((2, 12), 0.5, dtype=np.float32),
        np.array([0, 1]),
        train.class_names[:2] + train.class_names[2:],
        normalized=False,
    )
    with pytest.raises(NotNormalized):
        affinities(raw, build_cache(train))


# --- cache_logits ---------------------------------------------------------------


def test_cache_logits_single_key_per_class_equals_affinities():
    train, queries, _clf = random_task(5, shots=1)
    cache = build_cache(train)
    assert np.array_equal(cache_logits(queries, cache), affinities(queries, cache))


def test_cache_logits_linear_in_duplicated_rows():
    train, queries, _clf = random_task(6, num_classes=3, shots=2, dim=8)
    cache = build_cache(train)
    doubled_feats = np.concatenate([train.features, train.features])
    doubled_labels = np.concatenate([train.labels, train.labels])
    order = np.argsort(doubled_labels, kind="stable")
    doubled = EmbeddingSet(
        doubled_feats[order], doubled_labels[order], train.class_names, normalized=True
    )
    doubled_cache = build_cache(doubled)
    assert np.allclose(
        cache_logits(queries, doubled_cache),
        2.0 * cache_logits(queries, cache),
        atol=1e-12,
    )


def test_cache_logits_matches_brute_force_accumulation():
    train, queries, _clf = random_task(7, num_classes=2, shots=2, test_rows=3, dim=6)
    beta = 5.5
    cache = build_cache(train, beta=beta)
    got = cache_logits(queries, cache)
    f = queries.features.astype(np.float64)
    for i in range(f.shape[0]):
        acc = [0.0, 0.0]
        for j in range(train.rows):
            dot = float(f[i] @ train.features[j].astype(np.float64))
            acc[int(train.labels[j])] += math.exp(-beta * (1.0 - dot))
        assert abs(got[i, 0] - acc[0]) < 1e-9
        assert abs(got[i, 1] - acc[1]) < 1e-9


def test_cache_logits_row_permutation_invariant():
    train, queries, _clf = random_task(8, num_classes=3, shots=4, dim=8)
    base = cache_logits(queries, build_cache(train))
    rng = np.random.default_rng(0)
    perm = rng.permutation(train.rows)
    keys = train.features[perm]
    values_labels = train.labels[perm]
    shuffled = CacheModel(
        keys,
        np.eye(3)[values_labels],
        train.class_names,
        shots_effective=4,
    )
    assert np.allclose(cache_logits(queries, shuffled), base, atol=1e-12)


# --- zero_shot_logits -----------------------------------------------------------


def test_zero_shot_identity_row_is_maximum():
    clf = TextClassifier(np.eye(3, 4, dtype=np.float32), ("a", "b", "c"))
    test = basis_set(3, 4, [0, 1, 2])
    z = zero_shot_logits(test, clf)
    assert z[0, 0] == 1.0
    assert np.argmax(z[0]) == 0
    assert np.all(np.abs(z) <= 1.0)


def test_zero_shot_orthogonal_rows_give_zero():
    clf = TextClassifier(np.eye(2, 4, dtype=np.float32), ("a", "b"))
    feats = np.zeros((1, 4), dtype=np.float32)
    feats[0, 3] = 1.0
    test = EmbeddingSet(feats, np.array([0]), ("a", "b"), normalized=True)
    assert np.array_equal(zero_shot_logits(test, clf), [[0.0, 0.0]])


# --- blended_logits -------------------------------------------------------------


def test_alpha_zero_equals_zero_shot_bitwise(small_task):
    train, test, clf = small_task
    cache = build_cache(train, alpha=0.0)
    out = blended_logits(test, cache, clf)
    zs = zero_shot_logits(test, clf)
    assert np.array_equal(out.values, zs)
    assert np.array_equal(predict(out), predict(zs))


def test_blend_components_identity(small_task):
    train, test, clf = small_task
    cache = build_cache(train, alpha=2.5, beta=4.0)
    out = blended_logits(test, cache, clf)
    assert np.array_equal(out.values, 2.5 * out.cache_term + out.clip_term)


def test_blended_beats_zero_shot_on_misaligned_synthetic_task(main_task):
    # reference accuracies frozen from the standalone real64 oracle run
    train, test, clf = main_task
    tip = np.mean(predict(blended_logits(test, build_cache(train), clf)) == test.labels)
    zs = np.mean(predict(zero_shot_logits(test, clf)) == test.labels)
    assert (tip, zs) == (0.688, 0.282)
    assert tip > zs


def test_blended_class_count_mismatch():
    train, queries, _clf = random_task(9, num_classes=3, dim=8)
    other_clf = TextClassifier(np.eye(2, 8, dtype=np.float32), ("x", "y"))
    with pytest.raises(DimMismatch):
        blended_logits(queries, build_cache(train), other_clf)


# --- mlp_form_logits ------------------------------------------------------------


def test_dual_form_identity_random_instances():
    for seed in range(10):
        train, queries, clf = random_task(seed, num_classes=4, shots=2, test_rows=5)
        cache = build_cache(train, alpha=1.7, beta=6.5)
        a = blended_logits(queries, cache, clf)
        b = mlp_form_logits(queries, cache, clf)
        assert np.max(np.abs(a.values - b.values)) < 1e-6


def test_mlp_form_single_key_identity_case():
    feats = np.zeros((1, 4), dtype=np.float32)
    feats[0, 0] = 1.0
    labels = np.array([0])
    cache = CacheModel(
        feats, np.array([[1.0, 0.0]]), ("a", "b"), alpha=3.0, beta=5.5, shots_effective=1
    )
    test = EmbeddingSet(feats, labels, ("a", "b"), normalized=True)
    clf = TextClassifier(np.eye(2, 4, dtype=np.float32), ("a", "b"))
    out = mlp_form_logits(test, cache, clf)
    assert np.array_equal(out.cache_term, [[1.0, 0.0]])  # exp(0), empty class
    assert np.array_equal(out.values, [[3.0 * 1.0 + 1.0, 0.0]])


# --- predict --------------------------------------------------------------------


def test_predict_basic():
    assert np.array_equal(predict(np.array([[0.2, 0.9]])), [1])


def test_predict_tie_breaks_to_lowest_index():
    assert np.array_equal(predict(np.array([[0.5, 0.5], [1.0, 1.0]])), [0, 0])


def test_predict_rejects_nan_and_inf():
    with pytest.raises(NonFiniteLogit):
        predict(np.array([[0.1, float("nan")]]))
    with pytest.raises(NonFiniteLogit):
        predict(np.array([[0.1, float("inf")]]))


def test_predict_rejects_non_matrix():
    with pytest.raises(InvalidData):
        predict(np.array([0.1, 0.2]))


def test_predict_accepts_logits_batch():
    batch = LogitsBatch(np.array([[1.0, 2.0], [5.0, 4.0]]))
    assert np.array_equal(predict(batch), [1, 0])


# --- nearest-neighbor limit -------------------------------------------------------


def test_large_beta_cache_term_matches_nearest_key_class():
    rng = np.random.default_rng(0)
    for seed in range(5):
        train, _q, _c = random_task(seed + 40, num_classes=3, shots=2, dim=8)
        cache = build_cache(train, beta=1e4)
        # queries hug specific keys so the nearest key is unambiguous
        pick = rng.integers(0, train.rows, 4)
        noise = 0.02 * rng.standard_normal((4, 8))
        qfeats = normalize_rows(
            train.features[pick].astype(np.float64) + noise
        ).astype(np.float32)
        queries = EmbeddingSet(
            qfeats, np.zeros(4, dtype=np.int64), train.class_names, normalized=True
        )
        sims = qfeats.astype(np.float64) @ train.features.astype(np.float64).T
        nearest_class = train.labels[np.argmax(sims, axis=1)]
        got = predict(cache_logits(queries, cache))
        assert np.array_equal(got, nearest_class)
