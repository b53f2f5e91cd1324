"""Export jobs: image features and prompt-ensemble text classifiers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backbones import backbone_spec, load_encoder
from .errors import InvalidData, IoError, UndecodableImage
from .tipemb import write_classifier, write_tipemb

# The seven-template prompt ensemble used for zero-shot classifier rows.
TEMPLATES_ENSEMBLE7 = (
    "itap of a [CLASS].",
    "a bad photo of the [CLASS].",
    "a origami [CLASS].",
    "a photo of the large [CLASS].",
    "a [CLASS] in a video game.",
    "art of the [CLASS].",
    "a photo of the small [CLASS].",
)
TEMPLATE_SINGLE = "a photo of a [CLASS]."
PROMPT_MODES = ("single", "ensemble7")


@dataclass(frozen=True)
class ExportJob:
    """One image-feature export: class-per-folder dataset -> TIPEMB file."""

    root: str
    split: str
    backbone: str
    out: str
    prompt_mode: str = "ensemble7"

    def __post_init__(self):
        backbone_spec(self.backbone)  # raises UnknownBackbone early
        if self.prompt_mode not in PROMPT_MODES:
            raise InvalidData(f"prompt_mode must be one of {PROMPT_MODES}")
        if not self.root or not self.split or not self.out:
            raise InvalidData("root, split, and out must be non-empty")


def discover_images(root, split):
    """Sorted(class)/sorted(filename) walk of root/split; labels = folder order."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise IoError(f"split directory not found: {split_dir}")
    class_dirs = sorted(d for d in split_dir.iterdir() if d.is_dir())
    if not class_dirs:
        raise InvalidData(f"no class folders under {split_dir}")
    names = tuple(d.name for d in class_dirs)
    items: list[tuple[Path, int]] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and not p.name.startswith(".")
        )
        if not files:
            raise InvalidData(f"class folder has no images: {class_dir}")
        items.extend((path, label) for path in files)
    return names, items


def _decode(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except (UnidentifiedImageError, OSError) as exc:
        raise UndecodableImage(f"{path}: {exc}") from exc


def _normalize_rows(feats: np.ndarray, what: str) -> np.ndarray:
    feats64 = feats.astype(np.float64)
    norms = np.linalg.norm(feats64, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidData(f"{what} produced a zero-norm embedding row")
    return (feats64 / norms).astype(np.float32)


def export_image_features(job: ExportJob, batch_size: int = 64) -> Path:
    encoder = load_encoder(job.backbone)
    names, items = discover_images(job.root, job.split)
    rows = []
    for start in range(0, len(items), batch_size):
        batch = [_decode(path) for path, _label in items[start : start + batch_size]]
        feats = encoder.encode_images(batch)
        if feats.shape[1] != encoder.dim:
            raise InvalidData(
                f"encoder returned width {feats.shape[1]}, expected {encoder.dim}"
            )
        rows.append(feats)
    features = _normalize_rows(np.concatenate(rows, axis=0), "image encoder")
    labels = np.array([label for _path, label in items], dtype=np.uint32)
    return write_tipemb(job.out, features, labels, names, normalized=True)


def prompts_for(class_name: str, prompt_mode: str) -> tuple[str, ...]:
    if prompt_mode == "single":
        return (TEMPLATE_SINGLE.replace("[CLASS]", class_name),)
    if prompt_mode == "ensemble7":
        return tuple(t.replace("[CLASS]", class_name) for t in TEMPLATES_ENSEMBLE7)
    raise InvalidData(f"prompt_mode must be one of {PROMPT_MODES}")


def export_text_classifier(class_names, prompt_mode: str, backbone: str, out) -> Path:
    names = tuple(class_names)
    if not names or any(not n for n in names):
        raise InvalidData("class names must be non-empty strings")
    encoder = load_encoder(backbone)
    per_class = [prompts_for(name, prompt_mode) for name in names]
    num_templates = len(per_class[0])
    flat = [p for prompts in per_class for p in prompts]
    embs = encoder.encode_texts(flat)
    # per template: normalize; then average across templates and renormalize
    unit = _normalize_rows(embs, "text encoder").astype(np.float64)
    means = unit.reshape(len(names), num_templates, -1).mean(axis=1)
    weights = _normalize_rows(means, "template averaging")
    return write_classifier(out, weights, names)
