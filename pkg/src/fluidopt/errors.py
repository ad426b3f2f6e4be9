"""Exception hierarchy for the engine, solvers and optimizers."""


class FluidOptError(Exception):
    """Base class for all errors raised by this package."""


class SceneError(FluidOptError):
    """Invalid scene description (bad shape, unknown material, empty body...)."""

    def __init__(self, message, shape_id=None, line=None):
        self.shape_id = shape_id
        self.line = line
        prefix = ""
        if shape_id is not None:
            prefix += f"[{shape_id}] "
        if line is not None:
            prefix += f"(line {line}) "
        super().__init__(prefix + message)


class DegenerateDeformationError(FluidOptError):
    def __init__(self, particle_ids, message="non-positive det(F)"):
        self.particle_ids = list(map(int, particle_ids))
        super().__init__(f"{message}; particles {self.particle_ids[:10]}")


class RigidityError(FluidOptError):
    def __init__(self, body_id, message="degenerate covariance in rigid fit"):
        self.body_id = body_id
        super().__init__(f"{message} (body {body_id})")


class EscapeError(FluidOptError):
    def __init__(self, particle_ids):
        self.particle_ids = list(map(int, particle_ids))
        super().__init__(f"particles left the simulation domain: {self.particle_ids[:10]}")


class ResidualTooLargeError(FluidOptError):
    def __init__(self, residual, tolerance):
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        super().__init__(f"pressure solve residual {residual:.3e} > tolerance {tolerance:.3e}")


class CheckpointError(FluidOptError, LookupError):
    pass


class SimulationError(FluidOptError):
    """Wraps an engine error with the substep index where it happened."""

    def __init__(self, substep, cause):
        self.substep = substep
        self.cause = cause
        super().__init__(f"substep {substep}: {cause}")


class PoisonedAdjointError(FluidOptError):
    def __init__(self, substep, field):
        self.substep = substep
        self.field = field
        super().__init__(f"non-finite cotangent in '{field}' at substep {substep}")


class NonFiniteObjectiveError(FluidOptError):
    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message if index is None else f"{message} (parameter {index})")
