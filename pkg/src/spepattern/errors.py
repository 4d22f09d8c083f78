"""Exception hierarchy shared across the package."""


class SPGError(Exception):
    """Base class for all package errors."""


class DimensionError(SPGError, ValueError):
    """Tensor shapes or extents are incompatible with an operation."""


class ContractError(SPGError, ValueError):
    """A documented precondition of an operation does not hold."""


class RangeError(SPGError, ValueError):
    """An index, window or phase lies outside the valid range."""


class ConfigError(SPGError, ValueError):
    """A configuration value is invalid or inconsistent."""


class FormatError(SPGError, ValueError):
    """A serialized artifact (checkpoint, manifest, image) is malformed."""


class CheckpointFormatError(FormatError):
    """A checkpoint file has a bad magic, version, header or payload size."""


class NonFiniteLossError(SPGError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, step, seed, losses):
        self.step = step
        self.seed = seed
        self.losses = dict(losses)
        detail = ", ".join(f"{k}={v!r}" for k, v in self.losses.items())
        super().__init__(f"non-finite loss at step {step} (seed {seed}): {detail}")
