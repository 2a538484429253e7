"""Exception hierarchy shared across the package."""


class SpeckleError(Exception):
    """Base class for all errors raised by lrspeckle."""


class ShapeError(SpeckleError, ValueError):
    pass


class ParameterError(SpeckleError, ValueError):
    pass


class ImageFormatError(SpeckleError):
    """Unsupported or unrecognised image format."""


class CorruptHeaderError(ImageFormatError):
    pass


class TruncatedDataError(ImageFormatError):
    pass


class ManifestError(SpeckleError, ValueError):
    pass


class RegistrationError(SpeckleError):
    def __init__(self, message, frame_index=None):
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


class SolverError(SpeckleError):
    pass


class DivergenceError(SolverError):
    def __init__(self, update, iteration):
        super().__init__(f"non-finite values after {update} update at iteration {iteration}")
        self.update = update
        self.iteration = iteration


class ConfigError(ParameterError):
    """Invalid run configuration; ``field`` names the offending dotted key."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
