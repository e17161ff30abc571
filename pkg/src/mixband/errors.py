"""Exception types shared across the package."""


class MixbandError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFormat(MixbandError):
    """WAV container holds a codec other than 16-bit PCM."""


class UnsupportedChannels(MixbandError):
    """WAV file is not mono."""


class MalformedFile(MixbandError):
    """A container, header, or record does not parse."""


class UnsupportedRatio(MixbandError):
    """Resampling ratio other than 2:1 or 1:2."""


class InvalidFrequency(MixbandError):
    """Tone frequency at or above Nyquist."""


class TooShort(MixbandError):
    """Signal shorter than one analysis window."""


class InvalidConfig(MixbandError):
    """Parameter outside its documented range."""


class InsufficientData(MixbandError):
    """Fewer data points than clusters requested."""


class DimensionMismatch(MixbandError):
    """Feature dimension differs between codebook and features."""


class OffsetTooSmall(MixbandError):
    """Cluster ID offset below the wide-channel cluster count."""


class AlreadyWrapped(MixbandError):
    """Target sequence already carries boundary tokens."""


class EmptyInput(MixbandError):
    """Operation received no data."""


class NoMaskedFrames(MixbandError):
    """Masked-prediction loss needs at least one masked frame."""


class LabelOutOfRange(MixbandError):
    """Label or token index not below the vocabulary size."""


class LengthMismatch(MixbandError):
    """Sequence lengths disagree across inputs."""


class TargetTooLong(MixbandError):
    """Not enough frames to align the target sequence."""


class InvalidTarget(MixbandError):
    """Target sequence contains the blank symbol."""


class ChannelMismatch(MixbandError):
    """Manifest channel tag inconsistent with the file's sample rate."""
