"""Robust Queueing approximations for single-server queues with abandonment."""

from .dist import (
    Distribution,
    DistributionSpec,
    Family,
    ZeroExpansion,
    make_distribution,
    normalize_patience,
    zero_expansion,
)
from .exceptions import (
    BracketError,
    CalibrationError,
    CoverageError,
    GridRefinementError,
    InapplicableError,
    ParameterError,
    RQError,
    UnsupportedDistributionError,
    UnsupportedPatienceError,
)

__version__ = "0.1.0"
