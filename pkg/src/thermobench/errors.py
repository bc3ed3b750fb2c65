"""Exception types shared across the workbench."""


class ThermobenchError(Exception):
    """Base class for all workbench errors."""


class ValidationError(ThermobenchError):
    """A domain object or configuration violates its invariants."""


class PhysicsViolationError(ThermobenchError):
    """A parameter value is physically impossible (e.g. non-positive RC product)."""


class NumericalDegeneracyError(ThermobenchError):
    """A numerical routine lost positive definiteness or invertibility."""


class PreheatSizingError(ThermobenchError):
    """The heater cannot reach the occupied set point at the design condition."""

    def __init__(self, zone_id: int, message: str):
        super().__init__(message)
        self.zone_id = zone_id


class SolverFailure(ThermobenchError):
    """The embedded convex solver did not reach the requested tolerances."""
