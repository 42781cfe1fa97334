"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class LitMetricsError(Exception):
    """Base class for every error raised by this package."""


class IngestError(LitMetricsError):
    pass


class ParameterError(LitMetricsError, ValueError):
    pass


class MosaicFormatError(LitMetricsError, ValueError):
    pass


class MosaicLayoutError(MosaicFormatError):
    def __init__(self, label: str, message: str | None = None):
        self.label = label
        super().__init__(message or f"cells of panel {label!r} do not form a solid rectangle")


class SplitError(LitMetricsError, ValueError):
    pass


class GatewayError(LitMetricsError):
    """Raised by the chat gateway. Carries the endpoint and attempt count."""

    def __init__(self, message: str, *, endpoint: str = "", attempts: int = 0, status: int | None = None):
        self.endpoint = endpoint
        self.attempts = attempts
        self.status = status
        super().__init__(f"{message} (endpoint={endpoint}, attempts={attempts})")


class TransportError(GatewayError):
    pass


class RequestError(GatewayError):
    pass


class PayloadError(LitMetricsError, ValueError):
    pass


class VoltageFormatError(LitMetricsError, ValueError):
    pass


class FigureExtractionError(LitMetricsError):
    pass


class TextExtractionError(LitMetricsError):
    pass


class InputError(LitMetricsError, ValueError):
    pass


class StorageError(LitMetricsError, OSError):
    pass


class LoadError(LitMetricsError):
    pass


class ConfigError(LitMetricsError):
    pass
