"""Exception hierarchy.

Every error carries a module-qualified ``code`` (``"<module>.<ClassName>"``) so
the command line front end can emit machine-readable reports.
"""

from __future__ import annotations


class LpMallowsError(Exception):
    """Base class for all package errors."""

    module = "core"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"

    def to_dict(self) -> dict:
        return {"code": self.code, "message": str(self)}


# data_core ---------------------------------------------------------------


class DataError(LpMallowsError, ValueError):
    module = "data_core"


class MissingColumn(DataError):
    pass


class LongFormat(MissingColumn):
    pass


class UnparseablePeriod(DataError):
    pass


class DuplicateRow(DataError):
    pass


class InvalidValue(DataError):
    pass


class NonPositiveLevel(DataError):
    pass


class MissingRateColumn(MissingColumn):
    pass


class SeriesTooShort(DataError):
    pass


class InteriorMissing(DataError):
    pass


class MissingForecast(DataError):
    pass


# projection_engine --------------------------------------------------------


class ProjectionError(LpMallowsError, ValueError):
    module = "projection_engine"


class InvalidSpec(ProjectionError):
    pass


class EmptyDesign(ProjectionError):
    pass


class AllPolicyVarianceZero(ProjectionError):
    pass


class RankDeficientAfterPruning(ProjectionError):
    pass


class InsufficientDegreesOfFreedom(ProjectionError):
    pass


class RegimeMismatch(ProjectionError):
    pass


# mallows_averager ---------------------------------------------------------


class MallowsError(LpMallowsError, ValueError):
    module = "mallows_averager"


class NonPositiveDf(MallowsError):
    pass


class DimensionMismatch(MallowsError):
    pass


class InvalidWeights(MallowsError):
    pass


class SingularKKT(MallowsError):
    pass


class LeverageOne(MallowsError):
    pass


class ModelSetMismatch(MallowsError):
    pass


class SolverError(MallowsError):
    pass


# inference_suite ----------------------------------------------------------


class InferenceError(LpMallowsError, ValueError):
    module = "inference_suite"


class BandwidthExceedsSample(InferenceError):
    pass


class MissingRegimeValue(InferenceError):
    pass


class EmptyInput(InferenceError):
    pass


class OutOfRangeP(InferenceError):
    pass


class SampleMismatch(InferenceError):
    pass


# factor_engine ------------------------------------------------------------


class FactorError(LpMallowsError, ValueError):
    module = "factor_engine"


class Unbalanced(FactorError):
    pass


class RMaxTooLarge(FactorError):
    pass


# synthetic_lab ------------------------------------------------------------


class SyntheticError(LpMallowsError, ValueError):
    module = "synthetic_lab"


class InvalidConfig(SyntheticError):
    pass


class ExperimentFailed(SyntheticError):
    pass


# cli_app ------------------------------------------------------------------


class ConfigError(LpMallowsError, ValueError):
    module = "cli_app"


# warnings -----------------------------------------------------------------


class DegenerateSigma2Warning(UserWarning):
    pass


class NoConvergenceWarning(UserWarning):
    pass
