"""Exception hierarchy shared across the package."""


class PatSndError(Exception):
    """Base class for all errors raised by patsnd."""


class DataFormatError(PatSndError, ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, lineno, reason):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}")


class KBParseError(DataFormatError):
    pass


class DuplicateKeyError(PatSndError, ValueError):
    pass


class MissingEntityError(PatSndError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing entity"


class EmptyKBError(PatSndError, ValueError):
    pass


class InvalidInputError(PatSndError, ValueError):
    pass


class EmptyPropertyListError(PatSndError, ValueError):
    pass


class ShapeError(PatSndError, ValueError):
    pass


class UnknownRelationError(PatSndError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown relation"


class CorruptionExhaustedError(PatSndError, RuntimeError):
    pass


class NumericError(PatSndError, ArithmeticError):
    pass


class CheckpointError(PatSndError, ValueError):
    pass


class LabelError(PatSndError, ValueError):
    pass


class SpanError(PatSndError, ValueError):
    pass


class UndefinedMetricError(PatSndError, ValueError):
    pass


class AlignmentError(PatSndError, ValueError):
    pass
