"""Exception types shared across the package.

Each maps to a machine-readable code used by the HTTP service.
"""


class SketchFieldError(Exception):
    """Base class; `code` is the wire-format error identifier."""

    code = "error"


class ShapeError(SketchFieldError):
    """Operands have mismatched dimensions."""

    code = "shape_error"


class BoundsError(SketchFieldError):
    """A box or offset falls outside its host canvas."""

    code = "bounds_error"


class EmptyInkError(SketchFieldError):
    """An operation requiring ink pixels got a blank sketch."""

    code = "empty_ink"


class EmptyRegionError(SketchFieldError):
    """A region-producing operation found nothing to extract."""

    code = "empty_region"


class ParameterError(SketchFieldError):
    """A numeric argument is outside its documented range."""

    code = "parameter_error"


class StateError(SketchFieldError):
    """A session operation was called in the wrong state."""

    code = "state_error"


class ConfigurationError(SketchFieldError):
    """A configuration is internally inconsistent."""

    code = "configuration_error"


class GenerationError(SketchFieldError):
    """Procedural shape generation failed after retries."""

    code = "generation_error"


class FormatError(SketchFieldError):
    """A serialized payload does not match its declared format."""

    code = "format_error"
