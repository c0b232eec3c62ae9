"""Exception types shared across the package."""


class StclrError(Exception):
    """Base class for package-specific failures."""


class DatasetError(StclrError):
    """A dataset tree is missing, unreadable, or malformed."""


class EmptyDatasetError(DatasetError):
    """A dataset root contains no videos."""


class TaxonomyError(DatasetError):
    """A label is not part of the active taxonomy."""


class ShapeError(ValueError, StclrError):
    """Tensor shapes are incompatible with the requested operation."""


class BuildError(StclrError):
    """An encoder spec cannot be realized as a network."""


class CheckpointError(StclrError):
    """A checkpoint file is corrupt or belongs to a different architecture."""


class ConfigError(StclrError):
    """A run configuration is invalid or contains unknown keys."""


class DegenerateEmbeddingError(ValueError, StclrError):
    """An embedding has (near-)zero norm; cosine similarity is undefined."""


class BatchAssemblyError(ValueError, StclrError):
    """Views cannot be arranged into adjacent positive pairs."""


class NonFiniteError(StclrError):
    """Checked mode found a NaN or Inf intermediate value."""
