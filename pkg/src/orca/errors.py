"""Exception types shared across the package."""


class OrcaError(Exception):
    """Base class for all package errors."""


class ContractViolation(OrcaError, ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(OrcaError, ValueError):
    """Invalid or inconsistent configuration."""


class BackendLookupError(OrcaError, KeyError):
    """Requested backend id is not registered."""


class ProtocolError(OrcaError, RuntimeError):
    """Environment API used out of order (e.g. step after done)."""


class GenerationError(OrcaError, RuntimeError):
    """Demonstration generation exhausted its retry budget."""


class AggregationError(OrcaError, ValueError):
    """Results with incompatible metric kinds were aggregated together."""


class TrainingDiverged(OrcaError, RuntimeError):
    """Training loss became non-finite; a diagnostic manifest was written."""

    def __init__(self, message: str, manifest_path: str | None = None):
        super().__init__(message)
        self.manifest_path = manifest_path
