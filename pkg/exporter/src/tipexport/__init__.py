"""tipexport: write TIPEMB embedding files from images and prompt ensembles."""

from .backbones import (
    BACKBONES,
    BackboneSpec,
    ClipEncoder,
    ToyEncoder,
    backbone_spec,
    clip_style_preprocess,
    load_encoder,
)
from .errors import (
    BackboneUnavailable,
    InvalidData,
    IoError,
    TipExportError,
    UndecodableImage,
    UnknownBackbone,
)
from .export import (
    PROMPT_MODES,
    TEMPLATE_SINGLE,
    TEMPLATES_ENSEMBLE7,
    ExportJob,
    discover_images,
    export_image_features,
    export_text_classifier,
    prompts_for,
)
from .tipemb import encode_tipemb, write_classifier, write_tipemb

__version__ = "0.1.0"

__all__ = [
    "BACKBONES",
    "BackboneSpec",
    "BackboneUnavailable",
    "ClipEncoder",
    "ExportJob",
    "InvalidData",
    "IoError",
    "PROMPT_MODES",
    "TEMPLATES_ENSEMBLE7",
    "TEMPLATE_SINGLE",
    "TipExportError",
    "ToyEncoder",
    "UndecodableImage",
    "UnknownBackbone",
    "backbone_spec",
    "clip_style_preprocess",
    "discover_images",
    "encode_tipemb",
    "export_image_features",
    "export_text_classifier",
    "load_encoder",
    "prompts_for",
    "write_classifier",
    "write_tipemb",
]
