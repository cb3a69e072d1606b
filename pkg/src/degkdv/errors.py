"""Exception taxonomy shared across the package.

Each failure mode surfaced by the numerical machinery gets its own type so
callers (and the command line driver) can map them onto distinct exit paths:
degeneracy of the evolution and admissibility failures of the data are
reported separately from plain bad arguments.
"""


class DegKdVError(Exception):
    """Base class for all package errors."""


class ParameterError(DegKdVError, ValueError):
    """An argument is outside the documented range."""


class DataError(DegKdVError, ValueError):
    """Field data is unusable (non-finite values, wrong shape, wrong grid)."""


class DomainError(DegKdVError, ValueError):
    """A profile or coordinate request leaves the region where it is defined."""


class StructuralError(DegKdVError, ValueError):
    """A structural assumption fails (e.g. positivity set not an interval)."""


class UnsupportedVariantError(DegKdVError, TypeError):
    """Operation not defined for this profile variant."""


class ConsistencyError(DegKdVError, RuntimeError):
    """Internal cross-check failed (e.g. non-monotone map output)."""


class AdmissibilityError(DegKdVError, ValueError):
    """Initial data fails a slow-decay or moment admissibility requirement.

    Attributes
    ----------
    y : float or None
        Coordinate at which the failing bound was attained, when known.
    """

    def __init__(self, message, y=None):
        super().__init__(message)
        self.y = y


class DegeneracyError(DegKdVError, RuntimeError):
    """Loss of positivity of 1 + Z (equivalently 1 + g reaching 0).

    Attributes
    ----------
    node : float or None
        Grid coordinate where positivity failed.
    t : float or None
        Time at which the guard tripped, when raised mid-evolution.
    """

    def __init__(self, message, node=None, t=None):
        super().__init__(message)
        self.node = node
        self.t = t


class NonContractionError(DegKdVError, RuntimeError):
    """Duhamel fixed-point iteration failed to contract.

    Attributes
    ----------
    ratio : float
        Measured contraction ratio that was >= 1.
    """

    def __init__(self, message, ratio):
        super().__init__(message)
        self.ratio = ratio


class UnreliableDiagnosticWarning(UserWarning):
    """A diagnostic was computed in a regime where it is not trustworthy."""
