class LabError(Exception):
    """Base error; ``status`` is the CLI exit status it maps to."""

    default_status = 1

    def __init__(self, reason: str, status: int | None = None):
        self.reason = reason
        self.status = self.default_status if status is None else status
        super().__init__(f"Error {self.status}: {reason}")


class GridError(LabError):
    pass


class MediaError(LabError):
    pass


class AssemblyError(LabError):
    pass


class StaggerError(AssemblyError):
    """Operator product whose node/cell staggering does not line up."""


class SpectralError(LabError):
    pass


class SubordinationError(SpectralError):
    pass


class MultiplierError(LabError):
    pass


class VerificationError(LabError):
    pass


class DecompositionError(LabError):
    pass


class ConfigError(LabError):
    default_status = 2


class ResourceBoundError(LabError):
    default_status = 2
