"""Exception and warning types raised by the Bloch-spectral pipeline."""


class BlochDecayError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveCharge(BlochDecayError, ValueError):
    pass


class ChargeMismatch(BlochDecayError, ValueError):
    """sigma_hat(0) disagrees with e * Z."""


class ThetaOnDualLattice(BlochDecayError, ValueError):
    """Quasimomentum too close to the dual lattice 2*pi*Z^3."""


class TruncationNotConverged(BlochDecayError, ArithmeticError):
    """Last shell of a lattice sum is not negligible."""


class JelliumViolation(BlochDecayError, ValueError):
    pass


class EnergyNotPositive(BlochDecayError, ArithmeticError):
    def __init__(self, lambda_min, message=None):
        self.lambda_min = float(lambda_min)
        super().__init__(message or f"energy operator not positive: lambda_min = {lambda_min:.3e}")


class EigFailed(BlochDecayError, ArithmeticError):
    pass


class RangeTooSmall(BlochDecayError, ValueError):
    pass


class CrossingContamination(BlochDecayError, ValueError):
    pass


class BoxTooSmall(BlochDecayError, ValueError):
    pass


class AliasingGuard(BlochDecayError, ValueError):
    pass


class GaugeMismatch(BlochDecayError, ValueError):
    pass


class ConfigError(BlochDecayError, ValueError):
    pass


class HorizonExceeded(UserWarning):
    """Requested times lie beyond the aliasing-trust horizon."""


class EpsilonBelowResolution(UserWarning):
    """Requested epsilon is below the grid-resolved level spacing."""


class PSDClamped(UserWarning):
    """Tiny negative eigenvalues of the energy operator were clamped to zero."""
