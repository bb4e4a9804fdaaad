"""
Exception hierarchy for acmamba.

Every error raised by the library derives from AcmambaError and from the
closest builtin exception, so callers that catch ValueError or OSError keep
working.
"""


class AcmambaError(Exception):
    """Base class for all acmamba errors."""


class MissingFile(AcmambaError, FileNotFoundError):
    """A required input file does not exist."""


class CorruptHeader(AcmambaError, ValueError):
    """A container header is absent, unparseable or inconsistent."""


class SizeMismatch(AcmambaError, ValueError):
    """A container payload does not match the size declared by its header."""


class IoFailure(AcmambaError, OSError):
    """Writing an artefact failed."""


class PlacementFailure(AcmambaError, RuntimeError):
    """Anomaly blobs could not be placed without overlap."""


class InvalidTarget(AcmambaError, ValueError):
    """Requested region count is outside [1, pixel count]."""


class LengthMismatch(AcmambaError, ValueError):
    """Two vectors that must be aligned have different lengths."""


class NonPositiveDelta(AcmambaError, ValueError):
    """A discretization step size is not strictly positive."""


class EmptySequence(AcmambaError, ValueError):
    """A scan was requested over a sequence of length zero."""


class DimMismatch(AcmambaError, ValueError):
    """An input's feature or raster dimensions do not match the consumer."""


class NoTape(AcmambaError, RuntimeError):
    """backward() was called on a value that carries no recorded computation."""


class ShapeMismatch(AcmambaError, ValueError):
    """Arrays handed to an optimizer or loss do not share a shape."""


class UntrainedModel(AcmambaError, RuntimeError):
    """Detection was requested on a model whose parameters were never set."""


class SingleClassLabels(AcmambaError, ValueError):
    """ROC evaluation needs both anomaly and background labels."""


class DegenerateSegmentation(AcmambaError, RuntimeError):
    """Segmentation produced too few regions to train on."""


class PipelineStageError(AcmambaError, RuntimeError):
    """An error escaped a pipeline stage; the message carries the stage tag."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
