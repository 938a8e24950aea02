"""Exception types shared across modules."""


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteIterate(RuntimeError):
    """A solver iterate contains NaN or Inf."""


class EmptyMask(ValueError):
    """A sampling mask selects no k-space locations."""
