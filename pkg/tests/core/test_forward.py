"""Tests for assembly, Neumann solves and the measurement gap."""

import numpy as np
import pytest

from enclosure_eit.core.errors import MeshError, SolverError
from enclosure_eit.core.forward import (
    BoundaryData,
    ConductivityMap,
    ForwardModel,
    Gauge,
    boundary_data_from_function,
    energy,
    fourier_mode,
    lambda_diff,
    lambda_pq,
    solve_neumann,
)
from enclosure_eit.core.geometry import DomainSpec, InclusionSet
from enclosure_eit.core.mesh import generate_mesh, snap_boundary_point
from enclosure_eit.core.oracle import DiskPhantom, disk_polygon, gap_multiplier


@pytest.fixture(scope="module")
def model(diamond_mesh, diamond_set):
    return ForwardModel(diamond_mesh, diamond_set)


def test_stiffness_is_symmetric_with_constant_kernel(model):
    A = model.system.matrix
    assert abs(A - A.T).max() < 1e-12
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12


def test_conductivity_map_per_triangle(diamond_mesh):
    gamma = ConductivityMap((3.0,)).per_triangle(diamond_mesh)
    assert np.all(gamma[diamond_mesh.regions == 0] == 3.0)
    assert np.all(gamma[diamond_mesh.regions == -1] == 1.0)


def test_conductivity_map_must_cover_regions(diamond_mesh):
    with pytest.raises(MeshError, match="inclusion regions"):
        ConductivityMap(()).per_triangle(diamond_mesh)


def test_conductivity_map_rejects_non_positive():
    with pytest.raises(ValueError):
        ConductivityMap((0.0,))


def test_solution_has_zero_boundary_mean(model):
    u = model.solve(fourier_mode(model.mesh, 1))
    assert abs(u.boundary_mean()) < 1e-12


def test_non_zero_mean_data_rejected(model):
    g = BoundaryData(np.ones(len(model.mesh.boundary_edges)))
    with pytest.raises(SolverError, match="not zero-mean"):
        model.solve(g)


def test_gauge_invariance(model, pq_nodes):
    """Pinning a node instead of fixing the boundary mean shifts u by a constant."""
    P, Q = pq_nodes
    g = fourier_mode(model.mesh, 2, phase=0.3)
    mean = solve_neumann(model.system, g)
    pinned = solve_neumann(model.system, g, gauge=Gauge.PINNED, pin=17)
    shift = mean.values - pinned.values
    assert np.ptp(shift.real) < 1e-8
    assert lambda_pq(mean, P, Q) == pytest.approx(lambda_pq(pinned, P, Q), abs=1e-9)
    assert pinned.values[17] == 0.0


def test_linearity(model, pq_nodes):
    P, Q = pq_nodes
    g1 = fourier_mode(model.mesh, 1)
    g2 = fourier_mode(model.mesh, 3, phase=0.7)
    combined = model.measure(g1 + 2.0 * g2, P, Q)
    separate = model.measure(g1, P, Q) + 2.0 * model.measure(g2, P, Q)
    assert combined == pytest.approx(separate, abs=1e-9)


def test_neumann_to_dirichlet_is_self_adjoint(model):
    """∫ g₁ Ng₂ = ∫ g₂ Ng₁."""
    mesh = model.mesh
    g1 = fourier_mode(mesh, 1, phase=0.2)
    g2 = fourier_mode(mesh, 2, phase=1.1)
    u1 = model.solve(g1).values
    u2 = model.solve(g2).values
    assert np.dot(g1.load(mesh), u2) == pytest.approx(np.dot(g2.load(mesh), u1), rel=1e-8)


def test_energy_identity(model):
    """∫ γ|∇u|² = ∫ g u."""
    g = fourier_mode(model.mesh, 2, phase=0.4)
    u = model.solve(g)
    assert energy(u, model.system).real == pytest.approx(np.dot(g.load(model.mesh), u.values), rel=1e-8)


def test_complex_data_solves_real_and_imaginary_parts(model, pq_nodes):
    P, Q = pq_nodes
    mesh = model.mesh
    real = fourier_mode(mesh, 1)
    imag = fourier_mode(mesh, 2)
    combined = model.measure(real + 1j * imag, P, Q)
    assert combined == pytest.approx(model.measure(real, P, Q) + 1j * model.measure(imag, P, Q), abs=1e-9)


def test_lambda_pq_requires_boundary_nodes(model):
    u = model.solve(fourier_mode(model.mesh, 1))
    interior = next(i for i in range(model.mesh.n_nodes) if not model.mesh.is_boundary_node(i))
    with pytest.raises(MeshError, match="not a boundary node"):
        lambda_pq(u, interior, 0)


def test_null_inclusion_gap_is_exactly_zero(diamond_mesh, diamond, pq_nodes):
    """k = 1 assembles the same matrix twice, so the gap vanishes identically."""
    P, Q = pq_nodes
    null = InclusionSet.single(diamond, 1.0)
    g = fourier_mode(diamond_mesh, 1)
    assert lambda_diff(diamond_mesh, null, g, P, Q) == 0.0


def test_more_conductive_inclusion_lowers_the_voltage(model, pq_nodes):
    P, Q = pq_nodes
    assert model.gap(fourier_mode(model.mesh, 1), P, Q).real < 0.0


def test_boundary_data_from_function(diamond_mesh):
    g = boundary_data_from_function(diamond_mesh, lambda x, y: x)
    assert g.integral(diamond_mesh) == pytest.approx(0.0, abs=1e-12)
    assert g.values.shape == (len(diamond_mesh.boundary_edges),)


def test_disk_gap_matches_multiplier():
    """cos θ data, P = (1, 0), Q = (−1, 0): the gap is 2m₁."""
    phantom = DiskPhantom(0.5, 2.0)
    dom = DomainSpec((0.0, 0.0), 1.0, 256)
    incl = InclusionSet.single(disk_polygon(phantom, 0.05), phantom.k)
    mesh = generate_mesh(dom, incl, 0.05)
    P = snap_boundary_point(mesh, (1.0, 0.0))
    Q = snap_boundary_point(mesh, (-1.0, 0.0))
    gap = lambda_diff(mesh, incl, fourier_mode(mesh, 1), P, Q)
    assert gap.real == pytest.approx(2.0 * gap_multiplier(1, phantom), rel=0.1)
    assert abs(gap.imag) < 1e-12
    assert 2.0 * gap_multiplier(1, phantom) == pytest.approx(-4.0 / 13.0)


@pytest.mark.slow
def test_disk_gap_converges_with_mesh_size():
    """Halving h cuts the error of the cos θ gap at least threefold."""
    phantom = DiskPhantom(0.5, 2.0)
    exact = 2.0 * gap_multiplier(1, phantom)
    errors = []
    for h in (0.08, 0.04):
        dom = DomainSpec((0.0, 0.0), 1.0, 64)
        incl = InclusionSet.single(disk_polygon(phantom, h), phantom.k)
        mesh = generate_mesh(dom, incl, h)
        P = snap_boundary_point(mesh, (1.0, 0.0))
        Q = snap_boundary_point(mesh, (-1.0, 0.0))
        errors.append(abs(lambda_diff(mesh, incl, fourier_mode(mesh, 1), P, Q) - exact))
    assert errors[0] >= 3.0 * errors[1]
