"""Exception hierarchy shared by every csrec module."""


class CsrecError(Exception):
    """Base class for all csrec errors."""


# scm
class CycleDetected(CsrecError):
    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"cycle through edge {edge[0]} -> {edge[1]}")


class BadCpt(CsrecError):
    def __init__(self, node, row, row_sum):
        self.node, self.row, self.row_sum = node, row, row_sum
        super().__init__(f"CPT of {node!r}, row {row}: entries sum to {row_sum!r}")


class IncompleteAssignment(CsrecError):
    pass


class ZeroProbabilityEvidence(CsrecError):
    pass


class DisjointnessViolation(CsrecError):
    pass


class UnknownNode(CsrecError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TooLarge(CsrecError):
    pass


class NonMarkovConfig(CsrecError):
    pass


# simulator / models
class UnknownItem(CsrecError, IndexError):
    pass


class TooDeep(CsrecError):
    pass


class BadRatios(CsrecError, ValueError):
    pass


class ShapeMismatch(CsrecError, ValueError):
    pass


class EmptyData(CsrecError, ValueError):
    pass


# metrics
class LengthMismatch(CsrecError, ValueError):
    pass


class EmptyInput(CsrecError, ValueError):
    pass


class SequenceTooShort(CsrecError, ValueError):
    pass


# harness
class ParseError(CsrecError):
    def __init__(self, msg, line=None, column=None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{msg}{where}")


class ValidationError(CsrecError, ValueError):
    def __init__(self, field, reason):
        self.field, self.reason = field, reason
        super().__init__(f"{field}: {reason}")


class MissingFtilde(CsrecError):
    pass


class RoleMismatch(CsrecError):
    pass
