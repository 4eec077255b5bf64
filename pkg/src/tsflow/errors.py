"""Exception hierarchy.

Every error carries a process exit code through its family:

    1  usage       bad command-line invocation
    2  definition  malformed pipeline definitions or graph structure
    3  data        unreadable CSV input, saved-pipeline directories, state blobs
    4  execution   failures while fitting or transforming
"""

from __future__ import annotations


class TsflowError(Exception):
    """Base class. ``step`` names the failing step, ``location`` a file position."""

    exit_code = 4

    def __init__(self, message: str = "", *, step: str | None = None, location: str | None = None):
        super().__init__(message)
        self.message = message
        self.step = step
        self.location = location

    def with_step(self, step: str) -> TsflowError:
        """Return a copy annotated with ``step``, nesting under any existing annotation."""
        path = step if self.step is None else f"{step}/{self.step}"
        err = type(self)(self.message, step=path, location=self.location)
        return err

    def with_prefix(self, prefix: str) -> TsflowError:
        return type(self)(f"{prefix}: {self.message}", step=self.step, location=self.location)

    def __str__(self) -> str:
        parts = []
        if self.step is not None:
            parts.append(f"[step {self.step}]")
        if self.location is not None:
            parts.append(f"[at {self.location}]")
        parts.append(self.message)
        return " ".join(parts)


class UsageError(TsflowError):
    exit_code = 1


class DefinitionError(TsflowError):
    exit_code = 2


class DataError(TsflowError):
    exit_code = 3


class ExecutionError(TsflowError):
    exit_code = 4


# definition / structure
class DefinitionSyntaxError(DefinitionError):
    pass


class UnknownTypeId(DefinitionError):
    pass


class DanglingReference(DefinitionError):
    pass


class CycleDetected(DefinitionError):
    pass


class UnknownInput(DefinitionError):
    pass


class DuplicateId(DefinitionError):
    pass


class InvalidParameter(DefinitionError):
    pass


# data / persistence
class MalformedTimestamp(DataError):
    pass


class NonIncreasingTime(DataError):
    pass


class RaggedRow(DataError):
    pass


class MalformedValue(DataError):
    pass


class MissingSource(DataError):
    pass


class CorruptState(DataError):
    pass


class ManifestVersionMismatch(DataError):
    pass


class ManifestNotFound(DataError):
    pass


class CorruptManifest(DataError):
    pass


# execution
class EmptyIntersection(ExecutionError):
    pass


class OverlappingIndices(ExecutionError):
    pass


class SchemaMismatch(ExecutionError):
    pass


class NotTrainable(ExecutionError):
    pass


class NotFitted(ExecutionError):
    pass


class InsufficientData(ExecutionError):
    pass


class DegenerateDesign(ExecutionError):
    pass


class ShiftTooLarge(ExecutionError):
    pass


class OrderTooLarge(ExecutionError):
    pass


class AllMissing(ExecutionError):
    pass


class NonEquidistantInput(ExecutionError):
    pass


class IncompatibleStep(ExecutionError):
    pass


class WindowTooLarge(ExecutionError):
    pass


class NoFinitePairs(ExecutionError):
    pass


class SampleTooLarge(ExecutionError):
    pass


class PeriodTooLarge(ExecutionError):
    pass


class PredicateShapeMismatch(ExecutionError):
    pass


class UnboundedLookback(ExecutionError):
    """Raised when online execution meets a module without a finite lookback."""


def all_error_classes() -> list[type[TsflowError]]:
    seen: list[type[TsflowError]] = []
    stack: list[type[TsflowError]] = [TsflowError]
    while stack:
        cls = stack.pop()
        seen.append(cls)
        stack.extend(cls.__subclasses__())
    return seen
