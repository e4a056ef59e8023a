"""Exception types raised across the package."""


class LCAError(Exception):
    """Base class for all package errors."""


class DataError(LCAError, ValueError):
    """Invalid input data, parameters or file contents."""


class ShapeError(DataError):
    """Array dimensions do not agree."""


class DomainError(LCAError, ValueError):
    """Argument outside the domain of a function."""


class EstimationError(LCAError, RuntimeError):
    """A fitting routine could not continue.

    ``algorithm``, ``iteration`` and ``trace`` are filled in by the estimator
    loop so that callers can see where the run stopped and what it had
    reached so far.
    """

    def __init__(self, message: str):
        super().__init__(message)
        self.algorithm: str | None = None
        self.iteration: int | None = None
        self.trace: list[float] = []

    def add_context(self, algorithm: str, iteration: int, trace) -> None:
        self.algorithm = algorithm
        self.iteration = iteration
        self.trace = list(trace)

    def __str__(self) -> str:
        msg = super().__str__()
        if self.algorithm is not None:
            msg = f"{self.algorithm}, iteration {self.iteration}: {msg}"
        return msg


class DegenerateUnitError(EstimationError):
    """Every class assigns zero density to some unit."""

    def __init__(self, unit: int):
        super().__init__(f"unit {unit + 1} has zero density under every class")
        self.unit = unit


class EmptyClassError(EstimationError):
    """A class received (numerically) zero total responsibility."""

    def __init__(self, class_index: int, mass: float):
        super().__init__(
            f"class {class_index + 1} is empty (total responsibility {mass:.3g})"
        )
        self.class_index = class_index


class SingularSystemError(EstimationError):
    """A linear system in a coefficient update is singular or ill-conditioned."""

    def __init__(self, message: str, class_index: int | None = None):
        if class_index is not None:
            message = f"class {class_index + 1}: {message}"
        super().__init__(message)
        self.class_index = class_index
