"""Exception hierarchy; every error carries a stable machine-readable code."""


class TipExportError(Exception):
    code = "TipExportError"


class UnknownBackbone(TipExportError):
    code = "UnknownBackbone"


class BackboneUnavailable(TipExportError):
    """Backbone is on the allow-list but its weights cannot be loaded here."""

    code = "BackboneUnavailable"


class UndecodableImage(TipExportError):
    code = "UndecodableImage"


class InvalidData(TipExportError):
    code = "InvalidData"


class IoError(TipExportError):
    code = "IoError"
