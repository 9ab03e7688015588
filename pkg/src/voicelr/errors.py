"""Exception types shared across the pipeline.

The CLI maps exception families onto exit codes: I/O and file-format
problems exit 1, validation and argument problems exit 2, numeric or
degenerate-data problems exit 3.
"""


class VoiceLRError(Exception):
    """Base class for errors raised by this package."""


class FormatError(VoiceLRError):
    """A file exists but its contents violate the expected format."""


class ValidationError(VoiceLRError):
    """Input data violates a documented invariant."""


class EmptyVoicedError(VoiceLRError):
    """No frame of a recording passed the voice-activity threshold."""


class TooShortError(VoiceLRError):
    """Voiced material is shorter than the smallest protocol chunk."""


class MissingSpeakerError(VoiceLRError):
    """No embedding records matched the requested speaker and filter."""


class DegenerateDataError(VoiceLRError):
    """Scores or labels cannot support the requested fit."""


class ConvergenceError(VoiceLRError):
    """An iterative fit failed to reach its gradient tolerance."""
