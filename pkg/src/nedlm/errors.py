"""Exception types raised across the package."""


class NedlmError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NedlmError):
    """Operand extents do not conform."""


class VocabularyError(NedlmError):
    """A word, character, or entity id is outside its table."""


class ContractError(NedlmError):
    """A caller violated an operation's precondition."""


class DegenerateSetError(NedlmError):
    """A sample set that must be nonempty is empty."""


class ParameterError(NedlmError):
    """A hyperparameter or configuration value is out of range."""


class StateError(NedlmError):
    """Optimizer or gradient state required for an update is missing."""


class NormalizationError(NedlmError):
    """A row cannot be projected onto the unit sphere."""


class NumericError(NedlmError):
    """A computation produced a non-finite value."""


class ParseError(NedlmError):
    """A data file is malformed; message carries the line number."""


class ValidationError(NedlmError):
    """A loaded record violates a structural invariant."""


class InitializationError(NedlmError):
    """Model state cannot be initialized from the given inputs."""


class FeatureError(NedlmError):
    """Feature computation received unusable input."""


class QueryError(NedlmError):
    """A disambiguation query is unanswerable as posed."""


class DivergenceError(NedlmError):
    """Training produced a non-finite loss."""
