"""Exception types raised by the extractor."""


class ExtractionError(Exception):
    """Base class for everything this package raises on purpose."""


class DecodeError(ExtractionError):
    """The input clip is missing, unreadable, or empty."""


class ModelError(ExtractionError):
    """An embedder identifier does not name an available model."""


class JobError(ExtractionError):
    """An ExtractionJob field violates its constraints."""
