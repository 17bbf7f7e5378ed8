"""Exception hierarchy shared by all modules."""


class PassiveImagingError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(PassiveImagingError, ValueError):
    pass


class FormatError(PassiveImagingError, ValueError):
    """Malformed input file (matrix, symbol field, trajectory sidecar)."""


class AttenuationError(PassiveImagingError, ValueError):
    """The system matrix has spectrum touching or crossing the imaginary axis."""


class ResonanceError(PassiveImagingError, ArithmeticError):
    """Lyapunov denominators mu_j + conj(mu_k) vanish."""


class ResolutionError(PassiveImagingError, ValueError):
    """Time step too coarse for the retained modes."""


class RangeError(PassiveImagingError, OverflowError):
    """Backward propagation over the source support overflows."""


class ChartError(PassiveImagingError, ValueError):
    """A ray left the phase-space region where the symbols are sampled."""


class ConfigError(PassiveImagingError, ValueError):
    """Run configuration failed schema validation."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
