"""Exception hierarchy shared by all engine modules."""


class MvrError(Exception):
    """Base class for every error raised by this package."""


class DimMismatchError(MvrError):
    """Vectors of different dimensionality were combined."""


class EmptyViewSetError(MvrError):
    """An aggregation was requested over an empty vector list."""


class ZeroVectorError(MvrError):
    """A zero-norm vector was used where a direction is required."""


class FormatError(MvrError):
    """A store file is structurally malformed (bad magic, truncation, ...)."""


class DataError(MvrError):
    """Payload values violate data invariants (NaN, missing identity, ...)."""


class ServiceError(MvrError):
    """A remote service call failed after retries.

    Carries retry metadata so callers can report what was attempted.
    """

    def __init__(self, message, attempts=0, last_status=None):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status


class ConfigError(MvrError):
    """Invalid configuration or degenerate inputs to a configured operation."""


class ParseError(MvrError):
    """A raw LLM response could not be parsed into any reformulation."""


class ProviderError(MvrError):
    """One provider exhausted its retries for one caption."""

    def __init__(self, message, caption_id="", provider="", cause=None):
        super().__init__(message)
        self.caption_id = caption_id
        self.provider = provider
        self.cause = cause


class CacheMissError(MvrError):
    """Required cached reformulations/embeddings are missing."""

    def __init__(self, message, missing_ids=()):
        super().__init__(message)
        self.missing_ids = list(missing_ids)


class RangeError(MvrError):
    """A count/scale argument is outside its allowed range."""


class EmptyKeywordSetError(MvrError):
    """Keyword extraction filtered out every word of a caption."""
