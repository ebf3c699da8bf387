"""Exception hierarchy for enclosure-eit."""


class EnclosureError(Exception):
    """Base class for all errors raised by enclosure-eit."""


class GeometryError(EnclosureError):
    """Invalid polygons, inclusion sets, domains or support tables."""


class MeshError(EnclosureError):
    """Mesh generation or mesh file failures."""


class SolverError(EnclosureError):
    """Linear solve failures.

    Attributes:
        residuals: Relative residual history of the failed solve
    """

    def __init__(self, message: str, residuals: list[float] | None = None) -> None:
        super().__init__(message)
        self.residuals = residuals or []


class ProbeError(EnclosureError):
    """Probe evaluation, sweep or estimator failures."""


class ConfigError(EnclosureError):
    """Experiment configuration failures."""


class VerificationError(EnclosureError):
    """A verification gate did not pass."""


__all__ = [
    "EnclosureError",
    "GeometryError",
    "MeshError",
    "SolverError",
    "ProbeError",
    "ConfigError",
    "VerificationError",
]
