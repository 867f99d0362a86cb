"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Tensor dimensions are incompatible; ``axis`` names the offending one."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ConfigError(ValueError):
    pass


class ImageFormatError(ValueError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class PayloadMismatchError(WeightFileError):
    pass


class MissingTensorError(WeightFileError):
    pass


class ExtraTensorError(WeightFileError):
    pass


class TensorShapeMismatchError(WeightFileError):
    pass
