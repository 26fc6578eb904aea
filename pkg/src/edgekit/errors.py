"""Exception hierarchy shared across edgekit."""


class EdgeKitError(Exception):
    """Base class for all library errors."""


class ImageFormatError(EdgeKitError, ValueError):
    """Raster file is decodable in principle but not in a supported layout."""


class ShapeError(EdgeKitError, ValueError):
    pass


class DomainError(EdgeKitError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(EdgeKitError, ValueError):
    pass


class BatchTooSmallError(EdgeKitError, ValueError):
    pass


class UnsupportedDetectorError(EdgeKitError, ValueError):
    pass


class ContractError(EdgeKitError, RuntimeError):
    """A pluggable component (e.g. a noise predictor) broke its contract."""
