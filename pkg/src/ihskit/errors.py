"""Exception taxonomy. Every engine failure raises one of these."""


class EngineError(Exception):
    """Base class for all engine errors."""


class IngestError(EngineError):
    """Malformed dataset file, unknown label token, or empty input."""


class ConfigError(EngineError):
    """Invalid run configuration (ratios, paths, profiles, flags)."""


class ValidationError(EngineError):
    """Input violates an operation precondition."""


class ShapeError(EngineError):
    """Tensor or feature dimensions do not match the model spec."""


class ZeroNormError(EngineError):
    """Normalized-sum pooling hit an all-zero token sum."""


class CacheFormatError(EngineError):
    """Embedding cache has a bad magic string or unsupported version."""


class CacheCorruptionError(EngineError):
    """Embedding cache is truncated or internally inconsistent."""


class EmbeddingLookupError(EngineError):
    """A required sample id is missing from an embedding store."""


class ConstructionError(EngineError):
    """Model spec invariants do not hold."""


class ContractError(EngineError):
    """Caller broke an API contract (lengths, ranges, empty inputs)."""


class NumericalError(EngineError):
    """Non-finite value produced during training."""


class ProtocolError(EngineError):
    """Evaluation-protocol guard tripped (store metadata mismatch)."""
