"""Exception hierarchy.

Errors split into two families so the CLI can map them to exit codes:
``ConfigInvalid`` (bad user configuration) and ``DataError`` (bad or
inconsistent input data). Anything else is treated as an internal error.
"""

from __future__ import annotations


class DataEngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigInvalid(DataEngineError):
    """Configuration failed validation.

    ``violations`` holds every problem found, as ``(field, message)`` pairs.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        lines = [f"{field}: {msg}" for field, msg in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class UnmappedLabel(ConfigInvalid):
    def __init__(self, label: str):
        self.label = label
        super().__init__([("ensemble.label_groups", f"label {label!r} has no group")])


class BadRatios(ConfigInvalid):
    def __init__(self, message: str):
        super().__init__([("split.ratios", message)])


class DataError(DataEngineError):
    """Input data is malformed or violates an invariant."""


class ParseError(DataError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class DegenerateBox(DataError):
    """A box has zero area, either as given or after clamping to the frame."""


class DuplicateFrameId(DataError):
    def __init__(self, frame_id: str):
        self.frame_id = frame_id
        super().__init__(f"duplicate frame_id {frame_id!r}")


class UnknownLabel(DataError):
    def __init__(self, label: str, frame_id: str | None = None):
        self.label = label
        self.frame_id = frame_id
        suffix = f" (frame {frame_id!r})" if frame_id is not None else ""
        super().__init__(f"label {label!r} is not in the class set{suffix}")


class UnknownSourceClass(DataError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"label {label!r} is neither a source nor a target class of the alignment")


class SchemeMismatch(DataError):
    pass


class MissingMetric(DataError):
    def __init__(self, metric: str, epoch: int | None = None):
        self.metric = metric
        self.epoch = epoch
        at = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"metric {metric!r} missing{at}")


class ZeroBaseline(DataError):
    def __init__(self, metrics: list[str]):
        self.metrics = list(metrics)
        super().__init__("baseline is zero for: " + ", ".join(self.metrics))


class InfeasiblePlacement(DataError):
    pass


class SourceUnreachable(DataError):
    pass


class StageError(DataEngineError):
    """Wraps an error raised inside a pipeline stage, recording which stage failed."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class IngestError(DataError):
    """A stage input file is missing or unreadable."""
