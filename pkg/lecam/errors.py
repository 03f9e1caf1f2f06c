from typing import Any


class LecamError(Exception):
    pass


class ValidationError(LecamError, ValueError):
    """A precondition on an input was violated."""


class ConfigError(LecamError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OptimizationError(LecamError):
    def __init__(self, message: str, trace: list[tuple[int, float]] | None = None):
        self.trace = list(trace or [])
        super().__init__(message)


class IncompatibleObservationError(ValidationError):
    def __init__(self, observation: Any):
        self.observation = observation
        super().__init__(f"No known haplotype pair is compatible with observation {observation}")


class ExperimentError(LecamError, RuntimeError):
    pass
