"""Exception hierarchy shared across the toolkit."""


class GaussAdvError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(GaussAdvError, ValueError):
    """A function argument violates its documented precondition."""


class UnknownShapeError(InvalidParameterError):
    """Requested synthetic shape name is not recognised."""


class MissingFieldError(GaussAdvError):
    """A serialized asset lacks required fields."""

    def __init__(self, fields):
        self.fields = list(fields)
        super().__init__(f"missing required fields: {', '.join(self.fields)}")


class NonFiniteValueError(GaussAdvError):
    """A NaN or infinity was found where finite data is required."""

    def __init__(self, index, detail=""):
        self.index = index
        msg = f"non-finite value at index {index}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnsupportedFormatError(GaussAdvError):
    """Asset file is in a format this reader does not handle."""


class IoFailureError(GaussAdvError, OSError):
    """Filesystem read/write failed."""


class DegenerateCovarianceError(GaussAdvError):
    """Projected 2D covariance collapsed below the invertibility floor."""


class TooFewGaussiansError(GaussAdvError):
    """Cloud is too small for the requested neighborhood operation."""


class DetectorFailureError(GaussAdvError):
    """Victim model could not score an image."""


class ShapeMismatchError(GaussAdvError, ValueError):
    """Image dimensions do not match what the consumer expects."""


class UnpairedGaussianError(GaussAdvError):
    """Current cloud contains a Gaussian with no initial-state counterpart."""


class NonFiniteLossError(GaussAdvError):
    """Optimization produced a NaN/inf loss."""

    def __init__(self, epoch, detail=""):
        self.epoch = epoch
        msg = f"non-finite loss at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class AdapterTimeoutError(GaussAdvError):
    """External scorer did not respond within the configured timeout."""


class MalformedResponseError(GaussAdvError):
    """External scorer response violates the exchange protocol."""


class NonFiniteConfidenceError(GaussAdvError):
    """External scorer returned a NaN/inf confidence."""


class DimensionMismatchError(GaussAdvError, ValueError):
    """Metric inputs have incompatible dimensions."""


class ConfigError(GaussAdvError):
    """Run configuration file or flags are invalid."""
