"""Exception hierarchy shared by all kmlab modules."""

from __future__ import annotations


class KMLabError(Exception):
    """Base class for every error raised by kmlab."""


class ContractViolation(KMLabError, ValueError):
    """Arguments are inconsistent with each other (e.g. dimension mismatch)."""


class InputError(KMLabError, ValueError):
    """An argument is malformed on its own (non-finite, out of range index)."""


class HypothesisViolation(KMLabError, ValueError):
    """A mathematical hypothesis required by the operation does not hold."""


class PreconditionError(KMLabError, ValueError):
    """A checked precondition (e.g. a point being fixed) failed."""


class CapabilityError(KMLabError):
    """The object lacks a capability the operation needs (e.g. no zero set)."""


class ConfigError(KMLabError):
    """One or more configuration problems, all collected before raising."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConfigParseError(ConfigError):
    """The configuration document is not well-formed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" if line is not None else "unknown line"
        if column is not None:
            where += f", column {column}"
        super().__init__(f"parse error at {where}: {message}")


class SubregularityFailure(KMLabError):
    """A sample had positive distance to the target set but zero residual."""

    def __init__(self, point, distance: float):
        self.point = point
        self.distance = distance
        self.kappa = float("inf")
        super().__init__(
            f"residual vanishes at a point with distance {distance:.3e} to the set; kappa = inf"
        )


class AbortedTrace(KMLabError):
    """The iteration blew up; ``trace`` holds the records computed so far."""

    def __init__(self, message: str, trace):
        self.trace = trace
        super().__init__(message)
