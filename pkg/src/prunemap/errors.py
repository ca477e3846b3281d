"""Exception hierarchy shared by every prunemap module."""


class PrunemapError(Exception):
    """Base class for all errors raised by prunemap."""


class InvalidArgument(PrunemapError, ValueError):
    pass


class ShapeMismatch(PrunemapError, ValueError):
    pass


class NonFiniteValue(PrunemapError, ArithmeticError):
    pass


class DivergenceDetected(PrunemapError, ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class NotPrunableLayer(PrunemapError, ValueError):
    pass


class SurgeryShapeError(PrunemapError, RuntimeError):
    pass


class NoFeasibleModel(PrunemapError, LookupError):
    pass


class ValidationError(PrunemapError, ValueError):
    """A transaction failed validation; ``position`` is its index in the batch."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class UnknownField(ValidationError):
    pass


class UnknownPlant(ValidationError):
    pass


class UnknownYieldFactor(ValidationError):
    pass
