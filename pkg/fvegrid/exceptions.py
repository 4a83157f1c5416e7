from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    message: str

    def __str__(self) -> str:
        return f'{self.path}: {self.message}'


class FveGridError(Exception):
    pass


class ConfigValidationError(FveGridError):
    def __init__(self, issues: Iterable[ConfigIssue], *, what: str = 'document'):
        self.issues = list(issues)
        self.what = what
        super().__init__(self._format())

    def _format(self) -> str:
        if not self.issues:
            return f'{self.what} validation failed'
        lines = [f'{self.what} validation failed:']
        lines.extend(f'  - {issue}' for issue in self.issues)
        return '\n'.join(lines)


class QuadratureError(FveGridError):
    pass


class BasisError(FveGridError):
    pass


class StrategyError(FveGridError):
    pass


class NonConvergence(StrategyError):
    pass


class OrderingViolation(StrategyError):
    pass


class UnknownPreset(StrategyError):
    pass


class MeshError(FveGridError):
    pass


class ProblemError(FveGridError):
    pass


class SolverFailure(FveGridError):
    def __init__(self, message: str, *, residual: float | None = None):
        self.residual = residual
        super().__init__(message)


class SingularConstraintSystem(FveGridError):
    pass


class ComplexOrOutOfRangeRoot(FveGridError):
    pass


class ZeroError(FveGridError):
    pass


class MissingReferenceCell(FveGridError):
    pass
