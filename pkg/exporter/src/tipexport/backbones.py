"""Backbone allow-list and encoder loading.

Two families: the published vision-language encoders (loaded through the
optional `clip` package, weights fetched by that package) and built-in
"toy" encoders that derive deterministic pseudo-embeddings from pixel and
prompt content. Toy encoders exist so the full export pipeline can be
exercised and validated without model weights; their features carry no
semantic signal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import BackboneUnavailable, InvalidData, UnknownBackbone

IMAGE_SIZE = 224


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    dim: int
    kind: str  # "clip" needs external weights; "toy" is built in


BACKBONES = {
    spec.name: spec
    for spec in (
        BackboneSpec("RN50", 1024, "clip"),
        BackboneSpec("RN101", 512, "clip"),
        BackboneSpec("ViT-B/32", 512, "clip"),
        BackboneSpec("ViT-B/16", 512, "clip"),
        BackboneSpec("RN50x16", 768, "clip"),
        BackboneSpec("toy16", 16, "toy"),
        BackboneSpec("toy64", 64, "toy"),
    )
}


def backbone_spec(name: str) -> BackboneSpec:
    try:
        return BACKBONES[name]
    except KeyError:
        known = ", ".join(sorted(BACKBONES))
        raise UnknownBackbone(f"unknown backbone {name!r}; known: {known}") from None


def clip_style_preprocess(img: Image.Image, size: int = IMAGE_SIZE) -> Image.Image:
    """Resize the short side to `size` keeping aspect ratio, then center crop."""
    img = img.convert("RGB")
    w, h = img.size
    short = min(w, h)
    new_w = max(size, round(w * size / short))
    new_h = max(size, round(h * size / short))
    img = img.resize((new_w, new_h), Image.Resampling.BICUBIC)
    left = (new_w - size) // 2
    top = (new_h - size) // 2
    return img.crop((left, top, left + size, top + size))


class ToyEncoder:
    """Deterministic stand-in encoder for pipeline validation.

    Images: preprocess, mean-pool to 8x8 RGB, then a fixed random
    projection (seeded by the backbone name) with tanh squashing.
    Texts: a unit-free gaussian row seeded by the prompt's SHA-256, so a
    given prompt string always maps to the same vector.
    """

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        self.dim = spec.dim
        seed = int.from_bytes(hashlib.sha256(spec.name.encode()).digest()[:8], "little")
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((spec.dim, 8 * 8 * 3)) / np.sqrt(8 * 8 * 3)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        rows = []
        for img in images:
            arr = np.asarray(clip_style_preprocess(img), dtype=np.float64) / 255.0
            pooled = arr.reshape(8, 28, 8, 28, 3).mean(axis=(1, 3))
            rows.append(np.tanh(self._proj @ pooled.reshape(-1)))
        return np.stack(rows).astype(np.float32)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        rows = []
        for prompt in prompts:
            digest = hashlib.sha256(prompt.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            rows.append(rng.standard_normal(self.dim))
        return np.stack(rows).astype(np.float32)


class ClipEncoder:
    """Wrapper over the optional `clip` package, eval mode, CPU."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        self.dim = spec.dim
        try:
            import clip  # type: ignore
            import torch  # type: ignore
        except ImportError as exc:
            raise BackboneUnavailable(
                f"backbone {spec.name} needs the 'clip' and 'torch' packages: {exc}"
            ) from exc
        self._clip = clip
        self._torch = torch
        try:
            self._model, self._preprocess = clip.load(spec.name, device="cpu")
        except Exception as exc:
            raise BackboneUnavailable(
                f"cannot load weights for backbone {spec.name}: {exc}"
            ) from exc
        self._model.eval()
        declared = int(self._model.visual.output_dim)
        if declared != spec.dim:
            raise InvalidData(
                f"backbone {spec.name} declares width {declared}, registry says {spec.dim}"
            )

    def encode_images(self, images):
        torch = self._torch
        batch = torch.stack([self._preprocess(img.convert("RGB")) for img in images])
        with torch.no_grad():
            feats = self._model.encode_image(batch)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts(self, prompts):
        torch = self._torch
        tokens = self._clip.tokenize(list(prompts))
        with torch.no_grad():
            feats = self._model.encode_text(tokens)
        return feats.cpu().numpy().astype(np.float32)


def load_encoder(name: str):
    spec = backbone_spec(name)
    if spec.kind == "toy":
        return ToyEncoder(spec)
    return ClipEncoder(spec)
