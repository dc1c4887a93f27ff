"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input contains NaN/Inf or leaves a function's domain."""


class RankError(ValueError):
    """A matrix is (numerically) rank deficient."""

    def __init__(self, message, singular_value=None):
        super().__init__(message)
        self.singular_value = singular_value


class TangencyError(ValueError):
    """A direction is not horizontal at the given basis."""


class ModeError(ValueError):
    """Operation is not defined for the reference bank's mode."""


class DegenerateError(ValueError):
    """Quantity is undefined at a singular point (zero norm, zero column)."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
