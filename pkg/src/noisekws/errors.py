"""Exception types shared across the package."""


class NoiseKwsError(Exception):
    """Base class for every error raised by this package."""


class UnsupportedFormat(NoiseKwsError):
    """WAV stream is readable but not 16-bit PCM mono 16 kHz."""


class CorruptHeader(NoiseKwsError):
    """Byte stream is not a parseable RIFF/WAVE container."""


class ConfigInvalid(NoiseKwsError):
    """A configuration value violates its documented constraints."""


class UnknownWord(NoiseKwsError):
    """Word is not in the 35-word vocabulary and is not the silence token."""


class MissingListFile(NoiseKwsError):
    """validation/testing list file not found."""


class EmptyCorpus(NoiseKwsError):
    """Corpus scan found no audio entries."""


class SourceTooShort(NoiseKwsError):
    """Audio source shorter than the window that must be cut from it."""


class ZeroPowerSignal(NoiseKwsError):
    """Signal has zero power, so no SNR can be realized against it."""


class InsufficientSamples(NoiseKwsError):
    """Not enough clips in a split to satisfy a sampling request."""


class ShapeMismatch(NoiseKwsError):
    """Tensor shapes are inconsistent for the requested operation."""


class DegenerateBatch(NoiseKwsError):
    """Batch statistics are not computable (fewer than two values per channel)."""


class IoError(NoiseKwsError):
    """Underlying file read/write failed."""


class FormatVersionMismatch(NoiseKwsError):
    """Weight file structure disagrees with what this code can read."""


class ChecksumMismatch(NoiseKwsError):
    """Weight file failed its integrity check."""
