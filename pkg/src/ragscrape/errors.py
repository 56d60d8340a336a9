"""Exception types shared across the pipeline."""


class RagscrapeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(RagscrapeError):
    """A config value violates its invariants."""


class RobotsDisallowed(RagscrapeError):
    """robots.txt forbids fetching this URL under the configured user agent."""


class FetchFailed(RagscrapeError):
    """HTTP fetch ended with status >= 400 after retries."""

    def __init__(self, status: int, url: str = ""):
        self.status = status
        self.url = url
        super().__init__(f"fetch failed with status {status}: {url}")


class Timeout(RagscrapeError):
    """Network operation exceeded the configured timeout after retries."""


class NotFound(RagscrapeError):
    """Local file path does not exist."""


class EmbedFailed(RagscrapeError):
    """Remote embedding API error after retries."""


class DimensionMismatch(RagscrapeError):
    """Vector dimensions disagree with the index or the embedder spec."""


class CorruptIndex(RagscrapeError):
    """Index file failed its magic, version, or checksum validation."""


class LlmUnavailable(RagscrapeError):
    """LLM backend transport failure after retries."""


class TemplateError(RagscrapeError):
    """Prompt template references an unknown placeholder."""
