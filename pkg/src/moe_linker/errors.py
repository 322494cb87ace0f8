"""Exception hierarchy shared across the package."""


class LinkerError(Exception):
    """Base class for all domain errors raised by moe_linker."""


class DataLoadError(LinkerError):
    pass


class ParseError(DataLoadError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class IntegrityError(LinkerError):
    pass


class RetrievalError(LinkerError):
    """KB transport failure; callers may retry."""


class RankingError(LinkerError):
    pass


class EnhancementError(LinkerError):
    pass


class EncodingError(LinkerError):
    pass


class ShapeError(LinkerError, ValueError):
    pass


class NumericError(LinkerError, ArithmeticError):
    pass


class TrainingError(LinkerError):
    pass


class CompatibilityError(LinkerError):
    pass


class CheckpointError(LinkerError):
    pass
