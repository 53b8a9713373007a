class ExportError(ValueError):
    """Base class for exporter failures."""


class BadPairsFile(ExportError):
    pass


class ModelLoadFailure(ExportError):
    """A pretrained backend could not be imported or loaded."""


class EncodeFailure(ExportError):
    """Encoding one comment failed; the message names the comment id."""
