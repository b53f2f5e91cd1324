"""Exporter CLI tests, including a hand-off into the consuming pipeline."""

import numpy as np
import pytest
from PIL import Image

from tipcache import (
    blended_logits,
    build_cache,
    load_classifier,
    load_embeddings,
    predict,
)
from tipexport.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_images")
    for split in ("train", "test"):
        for ci, cls in enumerate(("ant", "bee")):
            d = root / split / cls
            d.mkdir(parents=True)
            for j in range(2):
                rng = np.random.default_rng(100 * ci + j + (0 if split == "train" else 7))
                arr = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
                Image.fromarray(arr).save(d / f"im{j}.png")
    return root


def test_help_and_no_command(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 2


def test_missing_flag_exits_two(capsys):
    assert main(["export-images", "--root", "/x"]) == 2


def test_unknown_backbone_exits_one(dataset, tmp_path, capsys):
    code = main(
        ["export-images", "--root", str(dataset), "--split", "train",
         "--backbone", "nope", "--out", str(tmp_path / "x.emb")]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("code=UnknownBackbone msg=")


def test_missing_split_exits_one(dataset, tmp_path, capsys):
    code = main(
        ["export-images", "--root", str(dataset), "--split", "val",
         "--backbone", "toy16", "--out", str(tmp_path / "x.emb")]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("code=IoError msg=")


def test_batch_must_be_positive(dataset, tmp_path, capsys):
    code = main(
        ["export-images", "--root", str(dataset), "--split", "train",
         "--backbone", "toy16", "--out", str(tmp_path / "x.emb"), "--batch", "0"]
    )
    assert code == 2


def test_export_images_happy_path(dataset, tmp_path, capsys):
    out = tmp_path / "train.emb"
    code = main(
        ["export-images", "--root", str(dataset), "--split", "train",
         "--backbone", "toy16", "--out", str(out), "--batch", "3"]
    )
    assert code == 0
    assert f"wrote {out}" in capsys.readouterr().out
    loaded = load_embeddings(out)
    assert loaded.class_names == ("ant", "bee") and loaded.rows == 4


def test_export_text_happy_path(tmp_path, capsys):
    classes = tmp_path / "classes.txt"
    classes.write_text("ant\nbee\n\n")
    out = tmp_path / "clf.emb"
    code = main(
        ["export-text", "--classes-file", str(classes), "--prompts", "ensemble7",
         "--backbone", "toy16", "--out", str(out)]
    )
    assert code == 0
    assert "2 classes" in capsys.readouterr().out
    assert load_classifier(out).class_names == ("ant", "bee")


def test_export_text_empty_classes_file(tmp_path, capsys):
    classes = tmp_path / "empty.txt"
    classes.write_text("\n\n")
    code = main(
        ["export-text", "--classes-file", str(classes), "--backbone", "toy16",
         "--out", str(tmp_path / "c.emb")]
    )
    assert code == 1
    assert capsys.readouterr().err.startswith("code=InvalidData msg=")


def test_exported_files_drive_the_consumer_end_to_end(dataset, tmp_path, capsys):
    """Full hand-off: exporter output feeds cache building and inference."""
    train_out = tmp_path / "tr.emb"
    test_out = tmp_path / "te.emb"
    clf_out = tmp_path / "cf.emb"
    classes = tmp_path / "classes.txt"
    classes.write_text("ant\nbee\n")
    for split, out in (("train", train_out), ("test", test_out)):
        assert main(
            ["export-images", "--root", str(dataset), "--split", split,
             "--backbone", "toy16", "--out", str(out)]
        ) == 0
    assert main(
        ["export-text", "--classes-file", str(classes), "--backbone", "toy16",
         "--out", str(clf_out)]
    ) == 0

    train = load_embeddings(train_out)
    test = load_embeddings(test_out)
    clf = load_classifier(clf_out)
    cache = build_cache(train)
    pred = predict(blended_logits(test, cache, clf))
    assert pred.shape == (test.rows,)
    assert set(np.unique(pred)) <= {0, 1}
