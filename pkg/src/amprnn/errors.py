"""Exception hierarchy.

Everything raised on purpose by the package derives from :class:`AmpRnnError`,
which the command line maps to exit status 1.
"""


class AmpRnnError(Exception):
    """Base class for domain errors."""


class WavFormatError(AmpRnnError, ValueError):
    """Not RIFF/WAVE, or a WAV we do not handle (channels, bit depth, encoding)."""


class WavIOError(AmpRnnError, OSError):
    """The file ends before its header or data chunk says it should."""


class SegmentError(AmpRnnError, ValueError):
    """Signal too short to yield a single segment."""


class FilterError(AmpRnnError, ValueError):
    """Bad filter label, coefficients or frequency argument."""


class DesignError(FilterError):
    """Least-squares FIR design has no unique solution on the given grid."""


class CheckpointError(AmpRnnError, ValueError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Not valid JSON, or a field has the wrong type."""


class CheckpointVersionError(CheckpointError):
    """format_version missing or unsupported."""


class CheckpointDimensionError(CheckpointError):
    """Array lengths disagree with hidden_size."""


class DegenerateTargetError(AmpRnnError, ValueError):
    """Loss denominator is zero: the target window carries no energy."""


class AlignmentError(AmpRnnError, ValueError):
    """Paired signals or segment sets do not line up."""


class SignalLengthError(AmpRnnError, ValueError):
    """Signal shorter than the analysis requires."""
