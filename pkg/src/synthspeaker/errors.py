"""Exception types shared across the package.

Every failure raised on purpose derives from SynthSpeakerError so callers can
catch package errors without swallowing programming mistakes.
"""


class SynthSpeakerError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(SynthSpeakerError):
    """A byte stream could not be decoded; the message names the offending field."""


class EmptyInputError(SynthSpeakerError):
    """An operation received input too short or empty to act on."""


class DomainError(SynthSpeakerError):
    """A numeric argument fell outside the mathematical domain of the function."""


class ConfigError(SynthSpeakerError):
    """A configuration value is invalid or inconsistent with its companions."""


class ShapeError(SynthSpeakerError):
    """An array argument has the wrong shape; the message names what and where."""


class SerializationError(SynthSpeakerError):
    """A value cannot be rendered into the text row format."""


class CorpusError(SynthSpeakerError):
    """A training corpus contains characters outside the vocabulary."""


class SizeError(SynthSpeakerError):
    """A dataset is too small for the requested operation."""


class WeightingError(SynthSpeakerError):
    """Class weights cannot be computed because a class is absent."""


class SplitError(SynthSpeakerError):
    """A train/validation split would leave a class empty on one side."""


class TrainingError(SynthSpeakerError):
    """Training hit a non-recoverable numeric condition."""


class ParameterError(SynthSpeakerError):
    """A runtime parameter (temperature, patience, ...) is out of range."""


class TransferError(SynthSpeakerError):
    """A checkpoint cannot be loaded into the target model topology."""


class EvaluationError(SynthSpeakerError):
    """An evaluation set cannot support the requested metrics."""


class CheckpointError(SynthSpeakerError):
    """A checkpoint byte stream is malformed or from an unknown version."""


class GenerationQualityError(SynthSpeakerError):
    """Sampling kept rejecting model output far beyond the acceptable rate."""
