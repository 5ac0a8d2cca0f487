"""
Exception hierarchy shared by the paver modules.

Library code raises these; only the command-line entry point turns them into
exit codes and stderr diagnostics.
"""
from dataclasses import dataclass
from typing import List, Sequence


class PaverError(Exception):
    """Base class for every error raised by paver."""


class SpecificationError(PaverError, ValueError):
    """A term or specification violates a well-formedness rule."""


class ResourceError(PaverError):
    """The state budget was exhausted during expansion."""

    def __init__(self, limit: int, frontier: int):
        self.limit = limit
        self.frontier = frontier
        super().__init__(
            f"state budget of {limit} exceeded; {frontier} states still waiting on the frontier"
        )


class AnalysisError(PaverError):
    """An analysis precondition does not hold (unresolved choice, bad script)."""


class InternalError(PaverError, RuntimeError):
    """Invariant breach inside paver itself."""


@dataclass(frozen=True)
class SourceSpan:
    """Location of a diagnostic; start/end are byte offsets into the UTF-8 source."""
    start: int
    end: int
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    span: SourceSpan
    message: str
    kind: str = "error"

    def __str__(self) -> str:
        return f"{self.span}: {self.kind}: {self.message}"


class ParseError(PaverError):
    """Raised by the parser with every diagnostic it collected."""

    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics: List[Diagnostic] = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))
