class CascadeError(Exception):
    """Base class of every error raised by cascadesr."""

    def __init__(self, message: str):
        super().__init__(f"[ 🔴 ] {message}")


class ShapeError(CascadeError):
    pass


class ConfigurationError(CascadeError):
    pass


class FieldFormatError(CascadeError):
    pass


class FieldHeaderError(FieldFormatError):
    pass


class FieldTruncatedError(FieldFormatError):
    pass


class FieldSizeError(FieldFormatError):
    pass


class FieldIOError(FieldFormatError):
    pass


class CheckpointError(CascadeError):
    pass


class OutputError(CascadeError):
    pass


class ConvergenceError(CascadeError):
    """Conjugate gradient stopped at `max_iter` above tolerance."""

    def __init__(self, residual: float, iterations: int, tol: float):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"CG did not converge in {iterations} iterations: "
            f"relative residual {residual:.3e} > tol {tol:.1e}"
        )


class DivergenceError(CascadeError):
    """Training loss became NaN or infinite."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"Training diverged at step {step} (loss={loss})")


class NonFiniteError(CascadeError):
    pass
