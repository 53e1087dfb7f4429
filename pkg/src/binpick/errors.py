"""Exception types shared across the pipeline."""


class BinpickError(Exception):
    """Base class for all pipeline errors."""


class MeshFormatError(BinpickError):
    """Malformed or unsupported mesh file content."""


class GeometryError(BinpickError):
    """Degenerate or invalid geometry."""


class DecompositionError(BinpickError):
    """Convex decomposition could not produce a valid result."""


class ConfigError(BinpickError):
    """Invalid run configuration."""


class DataError(BinpickError):
    """Missing or inconsistent dataset content."""


class InstabilityError(BinpickError):
    """Simulation exceeded its speed cap; parameters are bad."""


class StrokeViolationError(BinpickError):
    """Gripper commanded outside its workspace or stroke limits."""


class DivergenceError(BinpickError):
    """Training loss became non-finite."""


class ParamFileError(BinpickError):
    """Corrupt or incompatible network parameter file."""


class UndefinedMetricError(BinpickError):
    """Confusion-matrix metric with a zero denominator."""
