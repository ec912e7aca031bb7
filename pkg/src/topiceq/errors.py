"""Exception types shared across the toolkit."""


class TopicEqError(Exception):
    """Base class for all toolkit errors."""


class InvalidEscape(TopicEqError):
    """A backslash with nothing tokenizable after it."""


class EmptyCorpus(TopicEqError):
    """Vocabulary requested over a corpus with no tokens."""


class EmptyVocab(TopicEqError):
    """Word-vocabulary construction filtered out every candidate."""


class TooSmall(TopicEqError):
    """Not enough items to split into train/valid/test."""


class ShapeError(TopicEqError):
    """Incompatible array shapes fed to a tape operation."""


class NumericsError(TopicEqError):
    """A forward value came out NaN or infinite."""


class EmptyBatch(TopicEqError):
    """Every pair in a batch was skipped (e.g. all bows empty)."""


class UnknownSymbol(TopicEqError):
    """Alignment query for a symbol outside the symbol vocabulary."""


class BadMagic(TopicEqError):
    """Checkpoint file does not start with the expected magic bytes."""


class VersionMismatch(TopicEqError):
    """Checkpoint format version is not supported."""


class TruncatedFile(TopicEqError):
    """Checkpoint file ended before all declared payload was read."""
