"""Shared exception types."""


class ShortfallError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ShortfallError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class EmbeddingIndexError(ShortfallError, IndexError):
    """Embedding id outside the table's vocabulary."""


class TrainingAbortError(ShortfallError, RuntimeError):
    """Training hit a non-finite quantity and cannot continue."""


class NonConvergenceError(ShortfallError, RuntimeError):
    """An iterative fit left its trust region (parameter bound exceeded)."""


class ValidationError(ShortfallError, ValueError):
    """Invalid user-supplied data or configuration."""


class SchemaError(ShortfallError, ValueError):
    """A persisted file does not match its documented schema."""
