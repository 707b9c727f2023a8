"""Exception hierarchy shared by all engine modules."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EngineError):
    """Operand dimensions are inconsistent with the operation."""


class DegenerateVectorError(EngineError):
    """A vector with zero norm was passed where a direction is required."""


class SizeError(EngineError):
    """A count constraint was violated (empty input, target larger than source, ...)."""


class NumericError(EngineError):
    """A non-finite value appeared where finite arithmetic is required."""


class TensorFormatError(EngineError):
    """A tensor file has a bad magic, version, dtype, or header field."""


class TensorCorruptionError(EngineError):
    """A tensor file payload is truncated or inconsistent with its header."""


class ManifestError(EngineError):
    """Base class for dataset-manifest problems."""


class ManifestSchemaError(ManifestError):
    """A required manifest field is missing or has the wrong type."""


class ManifestReferenceError(ManifestError):
    """A manifest references a path that does not resolve to a file."""


class ManifestValidationError(ManifestError):
    """Manifest content violates an invariant (duplicate task names, bad label)."""


class TapError(EngineError):
    """A requested feature-layer tap is not present in the source."""


class EmptyBankError(EngineError):
    """An operation that needs at least one stored task saw an empty bank."""


class TaskLookupError(EngineError):
    """A task id is not present in the memory bank."""


class DegenerateLabelsError(EngineError):
    """A metric needs both classes (or at least one positive) and got neither."""


class ConfigError(EngineError):
    """A configuration value violates its declared constraint."""
