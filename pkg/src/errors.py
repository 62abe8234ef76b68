"""
Exception hierarchy shared by every powerlin module.

Library code raises these; the CLI decides which ones fail a single benchmark
cell and which ones abort the whole run.
"""

from typing import List, Optional


class PowerLinError(Exception):
    """Base class for all domain errors raised by powerlin."""


class ZeroImpedance(PowerLinError):
    pass


class NonPositiveBase(PowerLinError):
    pass


class CaseSyntaxError(PowerLinError):
    """Malformed MATPOWER case text. Line and column are 1-based."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MissingMatrix(PowerLinError):
    def __init__(self, block: str):
        super().__init__(f"missing matrix block: mpc.{block}")
        self.block = block


class UnsupportedCostModel(PowerLinError):
    pass


class InvalidBusType(PowerLinError):
    pass


class NonConvergence(PowerLinError):
    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobian(PowerLinError):
    pass


class RecoveryDomain(PowerLinError):
    pass


class InconsistentModel(PowerLinError):
    pass


class Infeasible(PowerLinError):
    """Raised with a positive lower bound on the total constraint violation."""

    def __init__(self, message: str, violation: float, solution: Optional[object] = None):
        super().__init__(message)
        self.violation = violation
        self.solution = solution


class IterLimit(PowerLinError):
    def __init__(self, message: str, solution: Optional[object] = None):
        super().__init__(message)
        self.solution = solution


class NonConvex(PowerLinError):
    pass


class NonPositiveAggregate(PowerLinError):
    pass


class IncompleteMatrix(PowerLinError):
    pass


class NoFeasiblePoint(PowerLinError):
    pass


class BaselineMismatch(PowerLinError):
    pass


class InvalidNetwork(PowerLinError):
    """A loaded case fails validate_network; `violations` lists every message."""

    def __init__(self, source: str, violations: List[str]):
        super().__init__(f"{source}: {'; '.join(violations)}")
        self.source = source
        self.violations = list(violations)
