"""Exception hierarchy.

Everything derives from ``LiftError``; ``ValidationError`` subclasses are
bad user input (CLI exit code 1), anything else is a runtime failure.
"""


class LiftError(Exception):
    pass


class ValidationError(LiftError, ValueError):
    pass


class MalformedRow(ValidationError):
    pass


class RangeViolation(ValidationError):
    pass


class MissingProfile(ValidationError):
    pass


class TooFewPersons(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


class ConfigConflict(ValidationError):
    pass


class IncompatibleConfig(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class TooFewTargets(ValidationError):
    pass


class MissingAU(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class UnsupportedLayer(LiftError):
    pass


class NotPositiveDefinite(LiftError):
    pass


class NonFiniteObjective(LiftError):
    pass
