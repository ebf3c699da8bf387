"""Tests for the concentric-disk oracle."""

import math

import pytest

from enclosure_eit.core.oracle import (
    DiskPhantom,
    compare_fem_oracle,
    cosine_coefficients,
    disk_polygon,
    gap_multiplier,
    oracle_lambda_diff,
    radial_fd_gap,
)

PHANTOM = DiskPhantom(0.5, 2.0)


# ── Multiplier Tests ──────────────────────────────────────────────────────────


def test_first_multiplier():
    """μ = −1/3, ρ² = 1/4: m₁ = 2(−1/12)/(1 + 1/12) = −2/13."""
    assert PHANTOM.mu == pytest.approx(-1.0 / 3.0)
    assert gap_multiplier(1, PHANTOM) == pytest.approx(-2.0 / 13.0)


def test_multiplier_vanishes_without_contrast():
    assert gap_multiplier(3, DiskPhantom(0.5, 1.0)) == 0.0


def test_multiplier_sign_follows_contrast():
    assert gap_multiplier(1, DiskPhantom(0.5, 0.5)) > 0.0
    assert gap_multiplier(1, DiskPhantom(0.5, 4.0)) < 0.0


def test_multiplier_decays_with_mode():
    values = [abs(gap_multiplier(n, PHANTOM)) for n in range(1, 6)]
    assert values == sorted(values, reverse=True)


def test_multiplier_rejects_constant_mode():
    with pytest.raises(ValueError, match="positive integer"):
        gap_multiplier(0, PHANTOM)


@pytest.mark.parametrize(("rho", "k"), [(0.0, 2.0), (1.0, 2.0), (0.5, 0.0), (0.5, -1.0)])
def test_phantom_validation(rho, k):
    with pytest.raises(ValueError):
        DiskPhantom(rho, k)


# ── Fourier Sum Tests ─────────────────────────────────────────────────────────


def test_cosine_data_between_antipodal_points():
    """cos θ with P = (1, 0), Q = (−1, 0) gives 2m₁ = −4/13."""
    gap = oracle_lambda_diff(PHANTOM, cosine_coefficients(1), 0.0, math.pi)
    assert gap.real == pytest.approx(-4.0 / 13.0)
    assert gap.imag == pytest.approx(0.0, abs=1e-15)


def test_coincident_points_give_zero():
    assert oracle_lambda_diff(PHANTOM, cosine_coefficients(2, 0.4), 1.0, 1.0) == 0.0


def test_sine_data_between_antipodal_points_gives_zero():
    """sin θ vanishes at θ = 0 and θ = π, so does its potential."""
    coefficients = {1: -0.5j, -1: 0.5j}
    assert abs(oracle_lambda_diff(PHANTOM, coefficients, 0.0, math.pi)) < 1e-15


def test_nonzero_mean_rejected():
    with pytest.raises(ValueError, match="zero mean"):
        oracle_lambda_diff(PHANTOM, {0: 1.0, 1: 0.5, -1: 0.5}, 0.0, math.pi)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_radial_solve_matches_closed_form(n):
    assert radial_fd_gap(n, PHANTOM) == pytest.approx(gap_multiplier(n, PHANTOM), rel=1e-3)


def test_radial_solve_without_contrast():
    assert radial_fd_gap(2, DiskPhantom(0.5, 1.0), points=2000) == pytest.approx(0.0, abs=1e-5)


def test_disk_polygon_preserves_area():
    poly = disk_polygon(PHANTOM, 0.05)
    assert poly.area == pytest.approx(math.pi * 0.25, rel=1e-12)
    assert len(poly.vertices) == int(2.0 * math.pi * 0.5 / 0.075)


def test_disk_polygon_has_at_least_eight_sides():
    assert len(disk_polygon(PHANTOM, 0.4).vertices) == 8


# ── FEM Comparison ────────────────────────────────────────────────────────────


def test_compare_rows_coarse():
    rows = compare_fem_oracle(PHANTOM, [1, 2], h_target=0.1, boundary_resolution=128, fd_points=2000)
    assert [r.n for r in rows] == [1, 2]
    for row in rows:
        assert row.p_angle == pytest.approx(0.0, abs=1e-12)
        assert row.fem.real < 0.0
        assert row.radial_fd == pytest.approx(row.oracle, rel=1e-2)
        assert row.error < 0.3


@pytest.mark.slow
def test_fem_matches_oracle():
    rows = compare_fem_oracle(PHANTOM, [1, 2, 3, 4], h_target=0.02, boundary_resolution=512)
    for row in rows:
        assert row.error <= 0.02, f"mode {row.n}: fem {row.fem}, oracle {row.oracle}"


@pytest.mark.slow
def test_fem_error_falls_with_mesh_size():
    """Halving h cuts the gap error at least threefold."""
    coarse, fine = (
        compare_fem_oracle(PHANTOM, [1], h_target=h, boundary_resolution=64, fd_points=2000)[0].error
        for h in (0.06, 0.03)
    )
    assert coarse >= 3.0 * fine


@pytest.mark.slow
def test_fem_gap_is_isotropic():
    """cos θ between 0 and π reads the same gap as sin θ between π/2 and 3π/2."""
    cosine = compare_fem_oracle(PHANTOM, [1], h_target=0.04, boundary_resolution=64, fd_points=2000)[0]
    sine = compare_fem_oracle(
        PHANTOM, [1], h_target=0.04, boundary_resolution=64, p_angle=math.pi / 2, fd_points=2000
    )[0]
    assert sine.p_angle == pytest.approx(math.pi / 2, abs=1e-12)
    assert sine.q_angle == pytest.approx(-math.pi / 2, abs=1e-12)
    assert sine.fem.real == pytest.approx(cosine.fem.real, rel=0.02)
