"""Image and text export behavior, validated through the tipcache loader."""

import shutil

import numpy as np
import pytest
from PIL import Image

from tipcache import load_classifier, load_embeddings
from tipexport import (
    BACKBONES,
    ExportJob,
    InvalidData,
    TEMPLATE_SINGLE,
    TEMPLATES_ENSEMBLE7,
    UndecodableImage,
    UnknownBackbone,
    clip_style_preprocess,
    export_image_features,
    export_text_classifier,
    load_encoder,
    prompts_for,
)
from tipexport.errors import BackboneUnavailable


def make_image(path, seed, size=(40, 30)):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """root/train/{apple,banana}: 3 + 2 images, one an exact duplicate file."""
    root = tmp_path_factory.mktemp("images")
    apple = root / "train" / "apple"
    banana = root / "train" / "banana"
    apple.mkdir(parents=True)
    banana.mkdir(parents=True)
    make_image(apple / "img0.png", seed=10)
    make_image(apple / "img1.png", seed=11, size=(64, 48))
    shutil.copyfile(apple / "img0.png", apple / "dup0.png")
    make_image(banana / "pic.jpg", seed=12, size=(50, 50))
    make_image(banana / "zed.png", seed=13, size=(31, 77))
    return root


def export(dataset, tmp_path, name="feats.emb", backbone="toy16"):
    out = tmp_path / name
    job = ExportJob(root=str(dataset), split="train", backbone=backbone, out=str(out))
    export_image_features(job)
    return load_embeddings(out), out


def test_export_row_order_and_labels(dataset, tmp_path):
    loaded, _ = export(dataset, tmp_path)
    assert loaded.class_names == ("apple", "banana")
    assert np.array_equal(loaded.labels, [0, 0, 0, 1, 1])
    assert loaded.rows == 5 and loaded.dim == 16
    assert loaded.normalized


def test_export_rows_unit_norm(dataset, tmp_path):
    loaded, _ = export(dataset, tmp_path)
    norms = np.linalg.norm(loaded.features.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-4


def test_identical_files_identical_rows(dataset, tmp_path):
    loaded, _ = export(dataset, tmp_path)
    # sorted(apple) order: dup0.png, img0.png, img1.png; dup0 copies img0
    assert loaded.features[0].tobytes() == loaded.features[1].tobytes()
    assert loaded.features[1].tobytes() != loaded.features[2].tobytes()


def test_export_is_deterministic(dataset, tmp_path):
    _loaded1, out1 = export(dataset, tmp_path, "a.emb")
    _loaded2, out2 = export(dataset, tmp_path, "b.emb")
    assert out1.read_bytes() == out2.read_bytes()


def test_undecodable_image_reports_path(dataset, tmp_path):
    broken_root = tmp_path / "broken"
    shutil.copytree(dataset, broken_root)
    bad = broken_root / "train" / "apple" / "corrupt.png"
    bad.write_bytes(b"not an image at all")
    job = ExportJob(
        root=str(broken_root), split="train", backbone="toy16",
        out=str(tmp_path / "x.emb"),
    )
    with pytest.raises(UndecodableImage) as exc:
        export_image_features(job)
    assert "corrupt.png" in str(exc.value)


def test_unknown_backbone_rejected_at_job_construction(dataset, tmp_path):
    with pytest.raises(UnknownBackbone):
        ExportJob(root=str(dataset), split="train", backbone="RN999", out="x.emb")
    with pytest.raises(UnknownBackbone):
        export_text_classifier(("a",), "single", "RN999", tmp_path / "c.emb")


def test_registry_declares_published_widths():
    widths = {name: spec.dim for name, spec in BACKBONES.items() if spec.kind == "clip"}
    assert widths == {
        "RN50": 1024, "RN101": 512, "ViT-B/32": 512, "ViT-B/16": 512, "RN50x16": 768,
    }


def test_real_backbone_unavailable_without_weights():
    try:
        import clip  # type: ignore # noqa: F401
    except ImportError:
        with pytest.raises(BackboneUnavailable):
            load_encoder("RN50")
    else:
        pytest.skip("clip package installed; load path exercised elsewhere")


def test_preprocess_geometry():
    tall = Image.new("RGB", (100, 400), (10, 20, 30))
    wide = Image.new("L", (500, 250), 128)
    assert clip_style_preprocess(tall).size == (224, 224)
    out = clip_style_preprocess(wide)
    assert out.size == (224, 224) and out.mode == "RGB"


# --- text classifiers -----------------------------------------------------------


def test_ensemble_templates_verbatim():
    assert TEMPLATES_ENSEMBLE7 == (
        "itap of a [CLASS].",
        "a bad photo of the [CLASS].",
        "a origami [CLASS].",
        "a photo of the large [CLASS].",
        "a [CLASS] in a video game.",
        "art of the [CLASS].",
        "a photo of the small [CLASS].",
    )
    assert TEMPLATE_SINGLE == "a photo of a [CLASS]."


def test_prompt_substitution():
    assert prompts_for("otter", "single") == ("a photo of a otter.",)
    seven = prompts_for("otter", "ensemble7")
    assert len(seven) == 7
    assert seven[0] == "itap of a otter."
    assert all("[CLASS]" not in p for p in seven)
    with pytest.raises(InvalidData):
        prompts_for("otter", "ensemble99")


def test_single_class_text_export(tmp_path):
    out = tmp_path / "one.emb"
    export_text_classifier(("lighthouse",), "single", "toy16", out)
    clf = load_classifier(out)
    assert clf.weights.shape == (1, 16)
    assert abs(np.linalg.norm(clf.weights[0].astype(np.float64)) - 1.0) < 1e-6


def test_permuting_class_names_permutes_rows(tmp_path):
    names = ("ant", "bee", "cat")
    perm = ("cat", "ant", "bee")
    export_text_classifier(names, "ensemble7", "toy16", tmp_path / "a.emb")
    export_text_classifier(perm, "ensemble7", "toy16", tmp_path / "b.emb")
    a = load_classifier(tmp_path / "a.emb")
    b = load_classifier(tmp_path / "b.emb")
    for row, name in enumerate(perm):
        src = names.index(name)
        assert b.weights[row].tobytes() == a.weights[src].tobytes()


def test_prompt_modes_differ_and_export_is_deterministic(tmp_path):
    names = ("ant", "bee")
    export_text_classifier(names, "single", "toy16", tmp_path / "s.emb")
    export_text_classifier(names, "ensemble7", "toy16", tmp_path / "e1.emb")
    export_text_classifier(names, "ensemble7", "toy16", tmp_path / "e2.emb")
    assert (tmp_path / "e1.emb").read_bytes() == (tmp_path / "e2.emb").read_bytes()
    assert (tmp_path / "s.emb").read_bytes() != (tmp_path / "e1.emb").read_bytes()


def test_text_rows_unit_norm(tmp_path):
    export_text_classifier(("a", "b", "c"), "ensemble7", "toy64", tmp_path / "c.emb")
    clf = load_classifier(tmp_path / "c.emb")
    norms = np.linalg.norm(clf.weights.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-6


def test_rejects_empty_class_names(tmp_path):
    with pytest.raises(InvalidData):
        export_text_classifier((), "single", "toy16", tmp_path / "c.emb")
    with pytest.raises(InvalidData):
        export_text_classifier(("a", ""), "single", "toy16", tmp_path / "c.emb")
