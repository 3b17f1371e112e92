"""Exception hierarchy shared by the simulator modules."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Diagnostic:
    """One located deck message, rendered as ``file:line:col: severity: message``."""

    line: int
    col: int
    severity: str
    message: str
    source: str = "<deck>"

    def __str__(self) -> str:
        return f"{self.source}:{self.line}:{self.col}: {self.severity}: {self.message}"


class RetortError(Exception):
    """Base class for every error raised by the package."""


class DeckError(RetortError):
    """Deck could not be turned into a valid SimulationDeck."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


class LexError(DeckError):
    pass


class ParseError(DeckError):
    pass


class SemanticError(DeckError):
    pass


class DomainError(RetortError, ValueError):
    """Argument outside the domain of a constitutive or post-processing function."""


class InputError(RetortError, ValueError):
    pass


class SolverError(RetortError):
    """Base for numerical failures; carries where in the run it happened."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        self.step = step
        self.time = time
        where = []
        if step is not None:
            where.append(f"step {step}")
        if time is not None:
            where.append(f"t={time:.6g} s")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ConvergenceFailure(SolverError):
    pass


class CFLUnderflow(SolverError):
    pass


class StiffnessFailure(SolverError):
    pass


class AuditFailure(RetortError):
    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class SingularEquilibrium(RetortError):
    pass


class TargetNotFound(RetortError, KeyError):
    pass


class MismatchedTimes(RetortError, ValueError):
    pass
