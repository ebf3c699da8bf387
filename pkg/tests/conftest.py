"""Pytest configuration and shared fixtures."""

import json
from pathlib import Path

import pytest

from enclosure_eit.core.geometry import DomainSpec, InclusionSet, Polygon
from enclosure_eit.core.mesh import Mesh, generate_mesh, snap_boundary_point

DIAMOND = [(0.2, 0.0), (0.0, 0.2), (-0.2, 0.0), (0.0, -0.2)]

# Coarse settings shared by the command tests; fine enough for every gate that
# does not carry the slow marker
FAST_SETTINGS = {
    "h_target": 0.1,
    "boundary_resolution": 128,
    "tau_grid": [2.0, 4.0, 6.0, 8.0],
    "directions": [0.0, 2.0943951023931953, 4.1887902047863905],
    "verify_taus": [2.0, 4.0, 6.0],
    "min_window": 3,
}


@pytest.fixture(scope="session")
def diamond() -> Polygon:
    """Diamond with vertices (±0.2, 0), (0, ±0.2)."""
    return Polygon.from_vertices(DIAMOND)


@pytest.fixture(scope="session")
def diamond_set(diamond) -> InclusionSet:
    """The diamond with conductivity 2."""
    return InclusionSet.single(diamond, 2.0)


@pytest.fixture(scope="session")
def unit_disk() -> DomainSpec:
    return DomainSpec((0.0, 0.0), 1.0, 128)


@pytest.fixture(scope="session")
def diamond_mesh(unit_disk, diamond_set) -> Mesh:
    """Coarse conforming mesh of the unit disk around the diamond."""
    return generate_mesh(unit_disk, diamond_set, 0.1)


@pytest.fixture(scope="session")
def empty_mesh(unit_disk) -> Mesh:
    return generate_mesh(unit_disk, InclusionSet(), 0.1)


@pytest.fixture(scope="session")
def pq_nodes(diamond_mesh) -> tuple[int, int]:
    """Boundary nodes at (1, 0) and (−1, 0)."""
    return snap_boundary_point(diamond_mesh, (1.0, 0.0)), snap_boundary_point(diamond_mesh, (-1.0, 0.0))


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment file and return its path."""

    def _write(data: dict, name: str = "experiment.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def diamond_config(write_config, tmp_path):
    """Coarse diamond experiment writing into tmp_path/out."""

    def _config(conductivity: float = 2.0, **overrides) -> Path:
        data = {
            **FAST_SETTINGS,
            "inclusions": [{"vertices": DIAMOND, "conductivity": conductivity}],
            "output_dir": str(tmp_path / "out"),
            **overrides,
        }
        return write_config(data)

    return _config
