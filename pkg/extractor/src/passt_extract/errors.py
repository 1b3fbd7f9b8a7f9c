class ExtractError(Exception):
    """Base class for extractor failures."""


class InputError(ExtractError, ValueError):
    """Audio cannot be decoded or is empty."""


class CompatibilityError(ExtractError, RuntimeError):
    """The embedding backend emitted an unexpected dimensionality."""


class BackendUnavailable(ExtractError, RuntimeError):
    """The requested backend's dependencies or weights are not present."""
