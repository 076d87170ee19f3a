"""
Exception hierarchy for the Measuring the Data pipeline.

ValidationFailure covers bad inputs and configuration (CLI exit code 1),
NumericalFailure covers numerical breakdown (CLI exit code 2).
"""
import numpy as np


class MeasuringError(Exception):
    """Base class of every error raised by this project."""


class ValidationFailure(MeasuringError):
    """Input or configuration does not satisfy an operation's preconditions."""


class NumericalFailure(MeasuringError):
    """A computation broke down numerically."""


# dataset
class NonPositiveSigma(ValidationFailure):
    pass


class EmptyParameterList(ValidationFailure):
    pass


class NonUniformGrid(ValidationFailure):
    pass


class AllZeroInput(ValidationFailure):
    pass


class ClampedMassExceedsTolerance(ValidationFailure):
    pass


class RaggedRows(ValidationFailure):
    pass


class NonIncreasingGrid(ValidationFailure):
    pass


class ParseFailure(ValidationFailure):
    pass


class InvalidParameter(ValidationFailure):
    pass


# transport1d
class GridMismatch(ValidationFailure):
    pass


class NotNormalized(ValidationFailure):
    pass


class DegenerateSupport(NumericalFailure):
    pass


class ParameterOutOfRange(ValidationFailure):
    pass


# tangent_bundle
class KTooLarge(ValidationFailure):
    pass


class EmptyDataSet(ValidationFailure):
    pass


class DegeneratePlan(NumericalFailure):
    pass


class MissingPlan(ValidationFailure):
    pass


# id_estimator
class EmptyBundle(ValidationFailure):
    pass


class EmptyReports(ValidationFailure):
    pass


# koopman_reg
class DimensionMismatch(ValidationFailure):
    pass


class SingularJacobian(NumericalFailure):
    pass


class EmptyBundles(ValidationFailure):
    pass


class NonFiniteLoss(NumericalFailure):
    """Loss or parameters became NaN/Inf; `step` holds the offending step index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"Non-finite loss at optimizer step {step}")


# cli
class MissingArtifact(ValidationFailure):
    pass


class StageFailure(MeasuringError):
    """Wraps the error that aborted a pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")

    @property
    def is_numerical(self):
        return is_numerical_error(self.cause)


def is_numerical_error(error):
    """NumericalFailure, or a floating-point or linear-algebra error raised by numpy."""
    return isinstance(error, (NumericalFailure, np.linalg.LinAlgError, FloatingPointError))
