"""Exception hierarchy.

Every failure the toolkit raises on purpose derives from :class:`NmrxError`,
so callers (and the CLI) can separate expected, typed failures from bugs.
"""


class NmrxError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(NmrxError):
    """Input rejected before any processing (CLI exit code 2)."""


class ProcessingError(NmrxError):
    """A processing stage failed on valid input (CLI exit code 3)."""


# ingestion
class MalformedDocument(ValidationError):
    pass


class InvariantViolation(ValidationError):
    pass


class UnsupportedFeature(ValidationError):
    pass


class SchemaVersionError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# signal processing
class NotPowerOfTwo(ProcessingError):
    pass


class TooShort(ProcessingError):
    pass


class SingularFit(ProcessingError):
    pass


class NotCorrected(ProcessingError):
    pass


# molecules
class Disconnected(ValidationError):
    pass


class UnknownEnvironmentClass(ProcessingError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("unknown environment class(es): " + ", ".join(self.missing))


class SitesNotPredicted(ProcessingError):
    pass


# matching / scoring
class NucleusMismatch(ProcessingError):
    pass


class EmptyDatabase(ProcessingError):
    pass


class NoLegalEdits(ProcessingError):
    pass


class NoFeasibleAssignment(ProcessingError):
    pass


class EmptyPool(ProcessingError):
    pass


class TooFewScores(ProcessingError):
    pass


# hyperbolic geometry
class NonpositiveCurvature(ProcessingError):
    pass


class CurvatureMismatch(ProcessingError):
    pass


class InvalidPoint(ProcessingError):
    pass


class EmptyNegatives(ProcessingError):
    pass


# agent environment
class BudgetExhausted(ProcessingError):
    pass


class MalformedAction(ProcessingError):
    pass


class ShapeMismatch(ProcessingError):
    pass


class EmptyEvaluation(ProcessingError):
    pass
