"""Exception types shared across the package."""


class WaveHydroError(Exception):
    """Base class for all domain errors raised by this package."""


class FormatError(WaveHydroError):
    """Malformed field file. Carries the byte offset of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IndexTooSmall(WaveHydroError):
    """Temporal stencil requested before enough history exists."""


class DispersionViolation(WaveHydroError):
    """Wave component does not satisfy the deep-water dispersion relation."""


class PositiveDepth(WaveHydroError):
    """Subsurface evaluation requested above the mean water level."""


class NegativeDisparity(WaveHydroError):
    """Stereo pair synthesis requires non-negative ground-truth disparity."""


class NonConvergence(WaveHydroError):
    """Fixed-point refinement failed to reach tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystem(WaveHydroError):
    """Unregularized least-squares system is rank deficient."""

    def __init__(self, message, deficient_modes=()):
        super().__init__(message)
        self.deficient_modes = tuple(deficient_modes)


class DegenerateGeometry(WaveHydroError):
    """Plane fit could not find a consistent inlier set."""


class DimMismatch(WaveHydroError):
    """Operands have incompatible shapes."""


class AllMasked(WaveHydroError):
    """A pixel has no unmasked matching candidates."""


class EmptyMask(WaveHydroError):
    """No valid pixels to evaluate a loss or metric over."""


class TooShort(WaveHydroError):
    """Record is too short for the requested spectral analysis."""


class NoPeak(WaveHydroError):
    """Spectrum has no resolvable peak."""


class ConfigError(WaveHydroError):
    """Invalid run configuration. Carries the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
