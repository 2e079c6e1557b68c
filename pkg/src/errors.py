"""Exception hierarchy for the shape repair pipeline.

Every error subclasses the builtin it specialises so callers that catch
``ValueError`` / ``RuntimeError`` keep working.
"""

from typing import Optional


class ShapeRepairError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ConfigError(ShapeRepairError, ValueError):
    """Invalid configuration file or command-line usage."""

    exit_code = 1


class DataError(ShapeRepairError):
    """Problem with input or intermediate data."""

    exit_code = 2


class ParseError(DataError, ValueError):
    """Malformed mesh or artifact file."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None,
                 offset: Optional[int] = None):
        self.path = path
        self.line = line
        self.offset = offset
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class MeshIOError(DataError, OSError):
    """Mesh file could not be read or written."""


class OpenMeshError(DataError, ValueError):
    """Mesh is not closed (some edge is not shared by exactly two triangles)."""


class EmptyMeshError(DataError, ValueError):
    """Operation requires a mesh with vertices and triangles."""


class DegenerateInputError(DataError, ValueError):
    """Too few or collinear points for a fit."""


class EmptySurfaceError(DataError, ValueError):
    """Break field requested without any fracture-surface samples."""


class MissingArtifactError(DataError, FileNotFoundError):
    """An upstream artifact is absent."""

    def __init__(self, path: str, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(f"Missing artifact {path}; run `{producer}` first to create it")


class DimensionMismatchError(ShapeRepairError, ValueError):
    """Array shapes do not match what a network or optimizer expects."""


class ArchitectureMismatchError(DimensionMismatchError):
    """Checkpoint architecture differs from the requested one."""


class NumericError(ShapeRepairError, RuntimeError):
    """Numeric failure during optimisation."""

    exit_code = 3


class NonFiniteLossError(NumericError):
    """Loss became NaN or infinite."""

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        if dump_path:
            message = f"{message} (batch dumped to {dump_path})"
        super().__init__(message)
