"""Exception hierarchy. Every error raised by the toolkit derives from InpaintQError."""


class InpaintQError(Exception):
    """Base class for toolkit errors."""


class NonFinite(InpaintQError, ValueError):
    pass


class InvalidRange(InpaintQError, ValueError):
    pass


class DegenerateRange(InpaintQError, ValueError):
    pass


class ShapeMismatch(InpaintQError, ValueError):
    pass


class AccumulatorOverflow(InpaintQError, OverflowError):
    pass


class InvalidSchedule(InpaintQError, ValueError):
    pass


class StepOutOfRange(InpaintQError, IndexError):
    pass


class NonFiniteLoss(InpaintQError, FloatingPointError):
    pass


class MaskShapeMismatch(ShapeMismatch):
    pass


class PlacementExhausted(InpaintQError, RuntimeError):
    pass


class InsufficientPool(InpaintQError, ValueError):
    pass


class EmptyClass(InpaintQError, ValueError):
    pass


class NoGroundTruth(InpaintQError, ValueError):
    pass


class AllZeroDifferences(InpaintQError, ValueError):
    pass


class NonPositiveBaseline(InpaintQError, ValueError):
    pass


class SchemaError(InpaintQError, ValueError):
    pass


class ConfigError(InpaintQError, ValueError):
    pass
