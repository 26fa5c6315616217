"""Exception types shared across the engine, tasks and tooling."""


class GritsimError(Exception):
    """Base class for all gritsim errors."""


class ConfigError(GritsimError):
    """Configuration parsing or validation failed.

    Carries a list of human-readable messages, each with a config path
    and, where available, a line number.
    """

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("\n".join(self.messages))


class CapacityError(GritsimError):
    """Particle pool capacity would be exceeded."""


class SolverError(GritsimError):
    """Solver diverged (NaN / non-invertible deformation) or broke a contract."""

    def __init__(self, message, particle_index=None):
        self.particle_index = particle_index
        super().__init__(message)


class CflError(SolverError):
    """Requested substep exceeds the stability bound for the finest grid."""


class OutOfDomainError(GritsimError):
    """Position lies outside the outermost grid cube."""


class DumpFormatError(GritsimError):
    """Binary particle dump is malformed or of an unsupported version."""
