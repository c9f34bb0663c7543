"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class ClarqError(Exception):
    """Base class for all pipeline errors."""


class MalformedXml(ClarqError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")


class MissingAttribute(ClarqError):
    def __init__(self, attribute: str, row_index: int):
        self.attribute = attribute
        self.row_index = row_index
        super().__init__(f"row {row_index} is missing required attribute {attribute!r}")


class SchemaError(ClarqError):
    """A persisted file does not match the schema this version reads."""


class EmptySequence(ClarqError):
    pass


class DegenerateSet(ClarqError):
    """Training data contains a single class."""


class DomainTooSmall(ClarqError):
    def __init__(self, domain: str, reason: str):
        self.domain = domain
        super().__init__(f"domain {domain!r} is too small: {reason}")


class CollapsedStage(ClarqError):
    def __init__(self, stage_name: str, reason: str = "no positive pair survived classification"):
        self.stage_name = stage_name
        super().__init__(f"stage {stage_name}: {reason}")


class MissingCq(ClarqError):
    pass


class MissingArtifact(ClarqError):
    def __init__(self, artifact: str, path: str | None = None):
        self.artifact = artifact
        self.path = path
        super().__init__(f"missing artifact {artifact!r}" + (f" ({path})" if path else ""))


class ConfigMismatch(ClarqError):
    """Artifacts in the work directory were produced by a different config."""


class ConfigError(ClarqError):
    pass
