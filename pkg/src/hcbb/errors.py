"""Exception types shared across the package."""


class HcbbError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(HcbbError, ValueError):
    """An expression was evaluated outside the domain of one of its operators."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ParseError(HcbbError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SemanticError(HcbbError):
    pass


class BoundError(HcbbError, ValueError):
    pass


class RangeError(HcbbError, ValueError):
    pass


class NoFractional(HcbbError):
    pass


class RootFailure(HcbbError):
    """The relaxation at the root node could not be solved."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class TooManyBinaries(HcbbError):
    pass
