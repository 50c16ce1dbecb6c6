"""Exception types shared across the package."""


class DrbaryError(ValueError):
    """Base class for all domain errors raised by this package."""


class DimensionMismatch(DrbaryError):
    pass


class NonProbabilityWeights(DrbaryError):
    pass


class EmptySupport(DrbaryError):
    pass


class NonPositiveLambda(DrbaryError):
    pass


class NonPositiveTau(DrbaryError):
    pass


class AnchorMismatch(DrbaryError):
    pass


class NegativeGap(DrbaryError):
    pass


class InconsistentState(DrbaryError):
    pass


class EmptySampleSet(DrbaryError):
    pass


class ZetaOutOfRange(DrbaryError):
    pass


class ParameterOutOfRange(DrbaryError):
    pass


class UnsupportedCost(DrbaryError):
    pass


class BudgetInvariantViolated(DrbaryError):
    pass


class OracleFailure(DrbaryError):
    pass


class DimensionTooLarge(DrbaryError):
    pass
