"""Exception hierarchy shared by all modules."""


class RQError(Exception):
    """Base class for numerical failures raised by this package."""


class ParameterError(ValueError):
    """Invalid model or distribution parameters."""


class UnsupportedPatienceError(ParameterError):
    """Patience distribution violates the local-behaviour-at-zero requirement."""


class UnsupportedDistributionError(ParameterError):
    """Operation not available for this distribution family."""


class GridRefinementError(RQError):
    """A PDE solution left its admissible range; the grid must be refined."""


class BracketError(RQError):
    """Bracket expansion for a supremum or a root failed."""


class CoverageError(RQError):
    """A requested parameter lies outside a tabulated surface."""


class CalibrationError(RQError):
    """Calibration root-finding found no sign change."""


class InapplicableError(RQError):
    """A formula was called on a model it does not cover."""
