"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: configuration problems exit 2,
hypothesis violations exit 3, numerical divergence exit 4.
"""


class RdslinError(Exception):
    """Base class for all library errors."""


class ConfigurationError(RdslinError):
    """Invalid grids, tolerances, scenario files or call arguments."""


class AlignmentError(ConfigurationError):
    """A time or shift amount is not a multiple of the grid step."""


class OutOfRangeError(ConfigurationError):
    """A query leaves the sampled time window of a noise path."""


class CapabilityError(ConfigurationError):
    """A derivative-dependent operation was called without the needed
    derivative callbacks."""

    def __init__(self, message, order=None):
        super().__init__(message)
        self.order = order


class HypothesisViolation(RdslinError):
    """A quantitative hypothesis required by a construction fails.

    ``inequality`` names the violated condition, e.g. ``"K*L < alpha"``.
    """

    def __init__(self, message, inequality=None):
        super().__init__(message)
        self.inequality = inequality


class NotUniformlyStable(HypothesisViolation):
    """Top Lyapunov exponent (or decay rate) is not negative; the
    linearization constructions are unavailable."""

    def __init__(self, message, inequality="lambda_1 < 0"):
        super().__init__(message, inequality=inequality)


class NonContractionError(HypothesisViolation):
    """Fixed-point iteration failed to contract within the iteration cap."""


class NotACocycleError(HypothesisViolation):
    """The driving dependence of a system is not of shifted form, so the
    solution family is not a cocycle."""


class BudgetError(HypothesisViolation):
    """No admissible cutoff radius exists for the given Lipschitz budget."""


class DivergenceError(RdslinError):
    """Trajectory norm exceeded the divergence guard.

    ``t_bad`` reports the first grid time with a non-finite or oversized state.
    """

    def __init__(self, message, t_bad=None):
        super().__init__(message)
        self.t_bad = t_bad


class EstimationUncertaintyError(RdslinError):
    """A statistical estimate did not settle within its tolerance.

    ``partial`` carries whatever partial result is available.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateNormError(RdslinError):
    """A quadratic norm factor is singular or indefinite."""


class DegenerateCohomologyError(RdslinError):
    """The stationary coordinate change is not invertible on the probe set."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, HypothesisViolation):
        return 3
    if isinstance(exc, DivergenceError):
        return 4
    if isinstance(exc, RdslinError):
        return 2
    return 1
