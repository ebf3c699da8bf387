"""Closed-form measurement gap for a concentric disk in the unit disk.

Separation of variables with u = (a rⁿ + b r⁻ⁿ)e^{inθ} outside ρ and
u = c rⁿe^{inθ} inside, continuity of u and γ∂u/∂r at r = ρ and unit
Neumann data at r = 1 give Λ_γ − Λ_1 the Fourier multiplier

    m_n = 2μρ^{2n} / (n(1 − μρ^{2n})),  μ = (1 − k)/(1 + k).

The multiplier is cross-checked by a radial finite-difference solve.
"""

import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from enclosure_eit.config import config
from enclosure_eit.core.forward import ForwardModel, SolverSettings, fourier_mode
from enclosure_eit.core.geometry import DomainSpec, InclusionSet, Polygon
from enclosure_eit.core.mesh import generate_mesh, snap_boundary_point

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiskPhantom:
    """Disk of radius rho and conductivity k centred in the unit disk."""

    rho: float
    k: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.k > 0.0:
            raise ValueError(f"k must be positive, got {self.k}")

    @property
    def mu(self) -> float:
        return (1.0 - self.k) / (1.0 + self.k)


def gap_multiplier(n: int, phantom: DiskPhantom) -> float:
    """m_n of Λ_γ − Λ_1 for the Neumann mode e^{inθ}.

    Returns:
        2q/(n(1 − q)) with q = μρ^{2n}; negative for k > 1

    Raises:
        ValueError: If n < 1 (the constant mode is excluded by zero mean)
    """
    if n < 1:
        raise ValueError(f"Mode must be a positive integer, got n = {n}")
    q = phantom.mu * phantom.rho ** (2 * n)
    return 2.0 * q / (n * (1.0 - q))


def cosine_coefficients(n: int, phase: float = 0.0) -> dict[int, complex]:
    """Fourier coefficients of cos(n(θ − phase))."""
    half = 0.5 * complex(math.cos(n * phase), -math.sin(n * phase))
    return {n: half, -n: half.conjugate()}


def oracle_lambda_diff(
    phantom: DiskPhantom,
    coefficients: Mapping[int, complex],
    p_angle: float,
    q_angle: float,
) -> complex:
    """Σ_n ĝ_n m_{|n|}(e^{inθ_P} − e^{inθ_Q}).

    Raises:
        ValueError: If the n = 0 coefficient is non-zero
    """
    total = 0.0j
    for n, g_n in coefficients.items():
        if n == 0:
            if abs(g_n) > 1e-14:
                raise ValueError(f"Neumann data must have zero mean, got ĝ₀ = {g_n}")
            continue
        phase = np.exp(1j * n * p_angle) - np.exp(1j * n * q_angle)
        total += g_n * gap_multiplier(abs(n), phantom) * complex(phase)
    return total


def radial_fd_gap(n: int, phantom: DiskPhantom, points: int | None = None) -> float:
    """m_n from (rγu′)′ − γn²u/r = 0, u(0) = 0, u′(1) = 1 on a uniform grid.

    Finite volumes on nodes r_i = i/N with a half cell at r = 1; the
    tridiagonal system is solved in banded form.

    Returns:
        u(1) − 1/n, the multiplier m_n up to O(1/N²)

    Raises:
        ValueError: If n < 1
    """
    if n < 1:
        raise ValueError(f"Mode must be a positive integer, got n = {n}")
    N = int(config["oracle_fd_points"]) if points is None else points
    dr = 1.0 / N
    r = np.arange(1, N + 1) * dr
    half = (np.arange(N + 1) + 0.5) * dr  # r_{i+1/2}, i = 0..N

    def gamma(x: np.ndarray) -> np.ndarray:
        return np.where(x < phantom.rho, phantom.k, 1.0)

    a = half * gamma(half)
    gamma_nodes = gamma(r)
    gamma_nodes[np.isclose(r, phantom.rho)] = 0.5 * (phantom.k + 1.0)

    lower = a[:-1] / dr  # coefficient of u_{i-1} in row i, i = 1..N
    upper = a[1:] / dr
    diag = -(lower + upper) - dr * gamma_nodes * n * n / r
    rhs = np.zeros(N)
    # half cell at r = 1 carrying the unit flux
    diag[-1] = -lower[-1] - 0.5 * dr * gamma_nodes[-1] * n * n / r[-1]
    rhs[-1] = -1.0

    ab = np.zeros((3, N))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    u = solve_banded((1, 1), ab, rhs)
    return float(u[-1] - 1.0 / n)


def disk_polygon(phantom: DiskPhantom, h_target: float) -> Polygon:
    """Regular polygon of the disk's area with edges about 1.5·h_target long."""
    sides = max(8, int(2.0 * math.pi * phantom.rho / (1.5 * h_target)))
    radius = phantom.rho * math.sqrt(2.0 * math.pi / (sides * math.sin(2.0 * math.pi / sides)))
    angles = 2.0 * math.pi * np.arange(sides) / sides
    return Polygon.from_vertices(np.column_stack([radius * np.cos(angles), radius * np.sin(angles)]))


@dataclass(frozen=True)
class OracleRow:
    n: int
    p_angle: float
    q_angle: float
    fem: complex
    oracle: float
    radial_fd: float

    @property
    def error(self) -> float:
        """Relative error of the FEM gap; absolute when the oracle vanishes."""
        diff = abs(self.fem - self.oracle)
        return diff / abs(self.oracle) if self.oracle != 0.0 else diff


def compare_fem_oracle(
    phantom: DiskPhantom,
    modes: Sequence[int],
    h_target: float,
    boundary_resolution: int,
    p_angle: float = 0.0,
    settings: SolverSettings | None = None,
    executor: Executor | None = None,
    fd_points: int | None = None,
) -> list[OracleRow]:
    """FEM gap versus the oracle for g = cos(n(θ − θ_P)), one row per mode.

    Q sits on the boundary node nearest the antinode θ_P + π/n so even modes
    carry a non-zero gap; the oracle is evaluated at the snapped angles.
    """
    dom = DomainSpec((0.0, 0.0), 1.0, boundary_resolution)
    incl = InclusionSet.single(disk_polygon(phantom, h_target), phantom.k)
    mesh = generate_mesh(dom, incl, h_target)
    model = ForwardModel(mesh, incl, settings)
    P = snap_boundary_point(mesh, dom.boundary_point(p_angle))
    theta_p = math.atan2(mesh.nodes[P, 1], mesh.nodes[P, 0])

    def row(n: int) -> OracleRow:
        Q = snap_boundary_point(mesh, dom.boundary_point(theta_p + math.pi / n))
        theta_q = math.atan2(mesh.nodes[Q, 1], mesh.nodes[Q, 0])
        fem = model.gap(fourier_mode(mesh, n, phase=theta_p), P, Q)
        oracle = oracle_lambda_diff(phantom, cosine_coefficients(n, theta_p), theta_p, theta_q).real
        # the cosine data reduces the Fourier sum to m_n(1 − cos(n(θ_Q − θ_P)))
        weight = 1.0 - math.cos(n * (theta_q - theta_p))
        result = OracleRow(n, theta_p, theta_q, fem, oracle, weight * radial_fd_gap(n, phantom, fd_points))
        logger.debug("mode %d: fem %.6e, oracle %.6e, error %.2e", n, fem.real, oracle, result.error)
        return result

    if executor is None:
        return [row(n) for n in modes]
    return list(executor.map(row, modes))


__all__ = [
    "DiskPhantom",
    "OracleRow",
    "compare_fem_oracle",
    "cosine_coefficients",
    "disk_polygon",
    "gap_multiplier",
    "oracle_lambda_diff",
    "radial_fd_gap",
]
