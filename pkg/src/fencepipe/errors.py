"""Exception taxonomy shared across the package.

Every error raised on purpose derives from FencePipeError so callers
(and the CLI) can distinguish our failures from programming bugs.
"""

from __future__ import annotations


class FencePipeError(Exception):
    """Base class for all errors raised by fencepipe."""


class DimensionError(FencePipeError):
    """Shapes or sizes are inconsistent with what the operation requires."""


class EmptyInputError(FencePipeError):
    """An operation received an empty array or an empty collection."""


class NonFiniteError(FencePipeError):
    """A computation produced NaN or infinity."""


class GraphError(FencePipeError):
    """The autodiff or model graph is malformed (cycle, missing node, bad wiring)."""


class ConfigError(FencePipeError):
    """A configuration value is out of range or internally inconsistent."""


class AnnotationError(FencePipeError):
    """An annotation document cannot be parsed or refers to unknown shapes."""


class SceneSpecError(FencePipeError):
    """A synthetic scene specification cannot be satisfied."""


class WeightsFormatError(FencePipeError):
    """A weights file is malformed: bad magic, truncation, or checksum mismatch."""


class WeightsVersionError(WeightsFormatError):
    """A weights file declares an unsupported format version."""


class DataError(FencePipeError):
    """Input data on disk is missing, unreadable, or inconsistent with the manifest."""
