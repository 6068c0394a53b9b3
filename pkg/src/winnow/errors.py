"""Exception types shared across the engine."""


class WinnowError(Exception):
    """Base class for all engine errors."""


class FormatError(WinnowError):
    """A persisted file does not conform to its on-disk format."""


class DataError(WinnowError):
    """Well-formed file, invalid content (non-finite floats, bad norms)."""


class LifecycleError(WinnowError):
    """Attempted sample status transition not allowed by the lifecycle DAG."""


class PreconditionError(WinnowError):
    """An operation was invoked with its preconditions unmet."""


class ConfigError(WinnowError):
    """Invalid or unknown configuration key/value."""


class AcquisitionError(WinnowError):
    """Keyword expansion or crawl ingestion failed."""


class IndexBuildError(WinnowError):
    """Vector index construction or lookup failure."""


class SidecarError(WinnowError):
    """Sidecar call failed after retries."""


class ProtocolError(WinnowError):
    """Sidecar response violates the wire contract."""
