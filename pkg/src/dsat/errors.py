"""Exception types shared across the package."""


class DsatError(Exception):
    """Base class for package errors."""


class ShapeError(DsatError, ValueError):
    """Operands have incompatible shapes or ranks."""


class ConfigError(DsatError, ValueError):
    """Invalid configuration value or layer arrangement."""


class ContractError(DsatError, ValueError):
    """A documented precondition of an operation was violated."""


class NumericsError(DsatError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ManifestError(DsatError, ValueError):
    """Checkpoint manifest does not match the model layout."""


class TrainingDiverged(DsatError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, checkpoint: str | None):
        self.iteration = iteration
        self.checkpoint = checkpoint
        msg = f"non-finite loss at iteration {iteration}"
        if checkpoint:
            msg += f"; last good checkpoint written to {checkpoint}"
        super().__init__(msg)
