"""Exception taxonomy for the package.

Every error raised by library code belongs to one of these classes so the
command line layer can map failures onto a single machine-parsable line
(`error-class: message`) and a nonzero exit status.
"""

from __future__ import annotations


class MrsdfError(Exception):
    """Base class for all package errors."""

    #: short machine-parsable tag, overridden by subclasses
    tag = "error"


class DimensionError(MrsdfError):
    """Array rank or shape does not match what an operation requires."""

    tag = "dimension-error"


class ArgumentError(MrsdfError):
    """A scalar argument or configuration value is out of range or inconsistent."""

    tag = "argument-error"


class NumericError(MrsdfError):
    """Non-finite values or a numerically impossible state was produced."""

    tag = "numeric-error"


class FormatError(MrsdfError):
    """A serialized artifact (container, shape file, config) is malformed."""

    tag = "format-error"


class ObservationError(MrsdfError):
    """A depth observation is unusable (no hits, camera inside the volume, ...)."""

    tag = "observation-error"


class DegenerateShapeError(MrsdfError):
    """A field or mesh is degenerate (empty surface, all-positive grid, ...)."""

    tag = "degenerate-shape-error"
