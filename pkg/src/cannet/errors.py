"""Exception taxonomy shared by every module in the package."""


class CanError(Exception):
    """Base class for package-specific failures."""


class ShapeError(CanError, ValueError):
    """Tensor extents are incompatible with the requested operation."""


class ConfigError(CanError, ValueError):
    """A configuration value or precondition is invalid."""


class DataFormatError(CanError, ValueError):
    """A serialized file is malformed, truncated, or has an unsupported version."""


class DivergenceError(CanError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite training loss ({value!r}) at step {step}")
