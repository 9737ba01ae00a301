"""Shared exception types."""


class BalgebroidError(Exception):
    """Base class for all package-specific errors."""


class ParseError(BalgebroidError):
    pass


class DomainError(BalgebroidError):
    """Evaluation left the domain of an operation (log of a non-positive
    number, division by zero, square root of a negative number)."""


class EmptyDomain(BalgebroidError):
    """A sampling request rejected every candidate point."""


class ChartMismatch(BalgebroidError):
    pass


class DuplicateCoordinate(BalgebroidError):
    pass


class InvalidSpec(BalgebroidError):
    pass


class UnknownCoordinate(BalgebroidError):
    pass


class UnknownKind(BalgebroidError):
    pass


class NotBK(BalgebroidError):
    pass


class DegreeOverflow(BalgebroidError):
    pass


class RankMismatch(BalgebroidError):
    pass


class NotInFlag(BalgebroidError):
    pass


class Degenerate(BalgebroidError):
    pass


class NonConstantSpan(BalgebroidError):
    pass


class UnsupportedRank(BalgebroidError):
    pass


class NotContact(BalgebroidError):
    pass


class NonTransverse(BalgebroidError):
    pass


class NoTransversality(BalgebroidError):
    pass


class NotSymplectic(BalgebroidError):
    pass


class NotJacobi(BalgebroidError):
    pass


class NotPoisson(BalgebroidError):
    pass


class NotB1(BalgebroidError):
    pass


class DomainExit(BalgebroidError):
    pass


class Blowup(BalgebroidError):
    pass


class NoReturn(BalgebroidError):
    pass


class NoConvergence(BalgebroidError):
    pass


class ConstantProjection(BalgebroidError):
    pass


class SingularLevel(BalgebroidError):
    pass
