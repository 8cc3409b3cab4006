"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FusionError):
    """A tunable was given an out-of-range or inconsistent value."""


class IoError(FusionError):
    """A file could not be read, decoded, or written."""


class FormatError(FusionError):
    """A binary payload violates its declared format."""


class MetadataError(FusionError):
    """Sequence metadata (EV list, manifest) is inconsistent."""


class StackShapeError(FusionError):
    """Frames or weight planes disagree in count or dimensions."""


class ShapeError(FusionError):
    """Array arguments disagree in shape."""


class WeightDomainError(FusionError):
    """Weight values violate their domain (negative, unnormalized)."""


class NumericsError(FusionError):
    """A computation produced non-finite values."""
