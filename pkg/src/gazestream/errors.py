"""Exception hierarchy shared across the package.

Every error that a caller can reasonably recover from derives from
GazestreamError so the CLI can map error classes to distinct exit codes.
Domain violations (negative eccentricity, zero luminance, bad band layout)
subclass ValueError as well, so library users who never look at the CLI
still get the conventional exception family.
"""


class GazestreamError(Exception):
    """Base class for all package-specific errors."""


class DomainError(GazestreamError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigError(GazestreamError, ValueError):
    """A parameter set or config file is malformed or inconsistent."""


class AssetError(GazestreamError):
    """A scene asset is malformed, degenerate, or fails validation."""


class TraceError(GazestreamError):
    """A gaze/camera trace is malformed (bad timestamps, bad vectors)."""


class ModelError(GazestreamError):
    """A surrogate model file is malformed or used with the wrong scene."""


class DatasetError(GazestreamError):
    """A training dataset is malformed or inconsistent with its manifest."""


class StalenessError(GazestreamError):
    """An update plan references a LoD state that is no longer current."""
