"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid geometric input (non-finite values, bad ranges)."""


class BehindCameraError(GeometryError):
    """A 3D point has non-positive depth in the camera it is projected into."""


class InvalidDepthError(GeometryError):
    """Depth value is non-positive or non-finite."""


class BranchAmbiguityError(GeometryError):
    """Rotation angle too close to pi for a well-defined logarithm."""


class LightFieldError(Exception):
    """Base class for light-field container and I/O failures."""


class ManifestError(LightFieldError):
    """Malformed or inconsistent light-field manifest."""


class MissingViewError(LightFieldError):
    """A view file referenced by the manifest does not exist."""


class DimensionMismatchError(LightFieldError):
    """Views in one light field disagree in size or channel count."""


class PfmFormatError(LightFieldError):
    """File is not a valid portable float map."""


class InitializationError(Exception):
    """Base class for initialization-stage failures."""


class InsufficientParallaxError(InitializationError):
    """Fewer than two views available for stereo matching."""


class InsufficientDataError(InitializationError):
    """Too few confident kernel entries to fit a camera motion."""


class DegenerateConfigurationError(InitializationError):
    """All RANSAC trials failed to produce a usable motion hypothesis."""


class SolverError(Exception):
    """Unrecoverable failure inside the joint solver."""
