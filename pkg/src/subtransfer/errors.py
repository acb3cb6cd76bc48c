"""Exception hierarchy shared by every module of the package."""


class SubtransferError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SubtransferError, ValueError):
    pass


class NonFiniteEntry(SubtransferError, ValueError):
    def __init__(self, where: str, position):
        self.position = position
        super().__init__(f"non-finite entry in {where} at position {position}")


class IndexOutOfRange(SubtransferError, IndexError):
    pass


class ColumnCountMismatch(DimensionMismatch):
    pass


class UnderdeterminedProblem(SubtransferError, ValueError):
    pass


class RateOutOfRange(SubtransferError, ValueError):
    pass


class SingularGram(SubtransferError, ArithmeticError):
    pass


class SingularFusedGram(SingularGram):
    pass


class SingularExternalGram(SingularGram):
    pass


class SingularCombiner(SingularGram):
    pass


class DegenerateRSS(SubtransferError, ArithmeticError):
    pass


class NoConvergedFit(SubtransferError, RuntimeError):
    pass


class EmptyInput(SubtransferError, ValueError):
    pass


class ConfigParseError(SubtransferError, ValueError):
    pass


class ValidationError(SubtransferError, ValueError):
    pass


class CsvParseError(SubtransferError, ValueError):
    pass
