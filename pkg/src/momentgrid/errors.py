"""Exception types shared across the pipeline."""


class MomentGridError(Exception):
    """Base class for all package-specific failures."""


class ShapeMismatchError(MomentGridError):
    """Operands have inconsistent dimensions."""


class EmptyInputError(MomentGridError):
    """An operation received an empty moment, map, list, or dataset."""


class InvariantError(MomentGridError):
    """A domain object violates one of its declared invariants."""


class ConfigError(MomentGridError):
    """Invalid generator, model, or training configuration."""


class FormatError(MomentGridError):
    """Base for on-disk format problems."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedPayloadError(FormatError):
    """The file ends before its declared payload does."""


class ParseError(FormatError):
    """A text record could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class AugmentationError(MomentGridError):
    """Two samples cannot be concatenated under the current constraints."""


class NumericsError(MomentGridError):
    """Non-finite loss or gradient, or a failed numeric precondition."""


class SubjectNotFoundError(MomentGridError):
    """No person noun could be extracted from a query sentence."""


class NoDetectionsError(MomentGridError):
    """A grounded segment has no detections to build a tube from."""
