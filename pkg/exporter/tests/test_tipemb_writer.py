"""Byte-level writer checks plus cross-validation against the tipcache loader."""

import struct
import zlib

import numpy as np
import pytest

from tipcache import load_classifier, load_embeddings
from tipexport import InvalidData, encode_tipemb, write_classifier, write_tipemb


def unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim))
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


def test_header_layout_and_crc():
    feats = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]], dtype=np.float32)
    labels = np.array([0, 1, 1])
    blob = encode_tipemb(feats, labels, ("ant", "bee"), normalized=True)

    assert blob[:7] == b"TIPEMB1"
    assert blob[7] == 1  # version
    num_classes, rows, dim = struct.unpack_from("<IQI", blob, 8)
    assert (num_classes, rows, dim) == (2, 3, 2)
    dtype, normalized, pad0, pad1 = struct.unpack_from("<BBBB", blob, 24)
    assert (dtype, normalized, pad0, pad1) == (1, 1, 0, 0)

    offset = 28
    for want in ("ant", "bee"):
        (nlen,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        assert blob[offset : offset + nlen].decode("utf-8") == want
        offset += nlen
    assert blob[offset : offset + 24] == feats.astype("<f4").tobytes()
    offset += 24
    assert blob[offset : offset + 12] == labels.astype("<u4").tobytes()
    offset += 12
    (crc,) = struct.unpack_from("<I", blob, offset)
    assert crc == zlib.crc32(blob[:offset])
    assert len(blob) == offset + 4


def test_round_trip_through_primary_loader(tmp_path):
    rng = np.random.default_rng(0)
    feats = unit_rows(rng, 6, 5)
    labels = np.array([0, 0, 1, 1, 2, 2])
    path = tmp_path / "set.emb"
    write_tipemb(path, feats, labels, ("a", "b", "c"), normalized=True)

    loaded = load_embeddings(path)
    assert np.array_equal(loaded.features.view(np.uint32), feats.view(np.uint32))
    assert np.array_equal(loaded.labels, labels)
    assert loaded.class_names == ("a", "b", "c")
    assert loaded.normalized


def test_classifier_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    weights = unit_rows(rng, 3, 8)
    path = tmp_path / "clf.emb"
    write_classifier(path, weights, ("x", "y", "z"))
    clf = load_classifier(path)
    assert np.array_equal(clf.weights.view(np.uint32), weights.view(np.uint32))
    assert clf.class_names == ("x", "y", "z")


def test_unicode_names_round_trip(tmp_path):
    feats = np.eye(2, dtype=np.float32)
    path = tmp_path / "u.emb"
    write_tipemb(path, feats, np.array([0, 1]), ("藍鯨", "čmelák"), normalized=True)
    assert load_embeddings(path).class_names == ("藍鯨", "čmelák")


def test_writer_rejects_bad_inputs():
    feats = np.eye(2, dtype=np.float32)
    with pytest.raises(InvalidData):
        encode_tipemb(feats, np.array([0, 2]), ("a", "b"), normalized=True)  # label range
    with pytest.raises(InvalidData):
        encode_tipemb(feats, np.array([0]), ("a", "b"), normalized=True)  # length
    with pytest.raises(InvalidData):
        encode_tipemb(feats, np.array([0, 1]), ("a", ""), normalized=True)  # empty name
    bad = feats.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InvalidData):
        encode_tipemb(bad, np.array([0, 1]), ("a", "b"), normalized=True)
    with pytest.raises(InvalidData):
        write_classifier("/tmp/never.emb", feats, ("a", "b", "c"))  # row count
