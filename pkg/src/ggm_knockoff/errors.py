"""Exception hierarchy.

``UserInputError`` subclasses describe invalid inputs or configurations and map
to exit code 2 on the command line; ``NumericalError`` subclasses describe
failures of the numerics on otherwise well-formed input and map to exit code 3.
"""


class GGMError(Exception):
    """Base class for all errors raised by this package."""


class UserInputError(GGMError, ValueError):
    pass


class NumericalError(GGMError, ArithmeticError):
    pass


# numeric core
class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class DimensionMismatch(UserInputError):
    pass


# random
class InvalidDof(UserInputError):
    pass


# estimator
class SampleSizeTooSmall(UserInputError):
    pass


class DegenerateColumn(NumericalError):
    pass


class InvalidQ(UserInputError):
    pass


class DiagonalInSwapSet(UserInputError):
    pass


# baselines / harness
class EmptyGrid(UserInputError):
    pass


class InfeasibleShift(NumericalError):
    pass


class EmptySample(UserInputError):
    pass


class ConfigError(UserInputError):
    pass


class ReplicateFailed(GGMError):
    """A Monte Carlo replicate raised; ``replicate`` holds its index."""

    def __init__(self, replicate, cause):
        super().__init__(f"replicate {replicate} failed: {type(cause).__name__}: {cause}")
        self.replicate = replicate
        self.cause = cause


# group pipeline
class NonPositiveAfterPseudocount(UserInputError):
    pass


class AllFeaturesFiltered(UserInputError):
    pass


class SubsampleTooLarge(UserInputError):
    pass


class TooFewPairs(UserInputError):
    pass
