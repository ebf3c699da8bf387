"""Numerical core of enclosure-eit."""

from enclosure_eit.core.console import console, setup_logging
from enclosure_eit.core.errors import (
    ConfigError,
    EnclosureError,
    GeometryError,
    MeshError,
    ProbeError,
    SolverError,
    VerificationError,
)

__all__ = [
    "console",
    "setup_logging",
    "EnclosureError",
    "GeometryError",
    "MeshError",
    "SolverError",
    "ProbeError",
    "ConfigError",
    "VerificationError",
]
