"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage errors exit 2, data errors exit 3,
numerical failures exit 4.
"""


class VolcraftError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 4


class ShapeError(VolcraftError, ValueError):
    """Array dimensions inconsistent with the declared network or grid."""

    exit_code = 3


class DomainError(VolcraftError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 3


class InversionError(VolcraftError):
    """Implied-vol inversion asked for a price outside the attainable band.

    ``bound`` identifies which side was violated: "lower" (below discounted
    intrinsic) or "upper" (above spot).
    """

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class InvalidQuoteError(VolcraftError, ValueError):
    """Quote conversion produced a non-positive vol; ``wing`` names the culprit."""

    exit_code = 3

    def __init__(self, message, wing):
        super().__init__(message)
        self.wing = wing


class GridMismatchError(VolcraftError, ValueError):
    """Surface or observation grid incompatible with the model grid."""

    exit_code = 3


class DecoderKindError(VolcraftError, ValueError):
    """Operation requires the other decoder kind (grid vs pointwise)."""

    exit_code = 3


class TrainingDivergenceError(VolcraftError):
    """Non-finite loss or gradient encountered; carries epoch/batch context."""

    def __init__(self, message, epoch=None, batch=None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.trace = trace if trace is not None else []


class CalibrationFailureError(VolcraftError):
    """Every optimizer start diverged; ``best`` carries the least-bad attempt."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CoverageError(VolcraftError):
    """Log-moneyness bands of the maturities do not overlap enough to re-grid.

    ``band`` is the (lo, hi) interval that was available.
    """

    def __init__(self, message, band):
        super().__init__(message)
        self.band = band


class ResolutionError(VolcraftError, ValueError):
    """Too few lattice nodes for the requested finite-difference check."""

    exit_code = 3


class IntegrationError(VolcraftError):
    """Quadrature refinement disagreement above tolerance."""


class FixedPointError(VolcraftError):
    """Strike/vol fixed-point iteration failed to converge."""


class GenerationError(VolcraftError):
    """Synthetic surface generation kept failing arbitrage screening."""

    def __init__(self, message, asset_id=None):
        super().__init__(message)
        self.asset_id = asset_id


class DataFormatError(VolcraftError, ValueError):
    """Malformed input file; ``line`` is the 1-based offending line when known."""

    exit_code = 3

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
