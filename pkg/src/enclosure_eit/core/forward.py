"""Piecewise-linear finite elements for ∇·γ∇u = 0 with Neumann data.

Realises the partial Neumann-to-Dirichlet functional Λ_γ(P,Q): g ↦ u(P) − u(Q)
and the measurement gap Λ_γ(P,Q) − Λ_1(P,Q) computed on one shared mesh.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import LinearOperator, cg

from enclosure_eit.config import config
from enclosure_eit.core.errors import MeshError, SolverError
from enclosure_eit.core.geometry import FloatArray, InclusionSet
from enclosure_eit.core.mesh import Mesh

logger = logging.getLogger(__name__)


class Gauge(StrEnum):
    """How the free additive constant of the Neumann problem is fixed."""

    BOUNDARY_MEAN = "boundary-mean"
    PINNED = "pinned"


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = field(default_factory=lambda: float(config["cg_rtol"]))
    maxiter_factor: float = field(default_factory=lambda: float(config["cg_maxiter_factor"]))
    residual_tol: float = field(default_factory=lambda: float(config["residual_tol"]))
    zero_mean_rtol: float = field(default_factory=lambda: float(config["zero_mean_rtol"]))


# ── Data types ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ConductivityMap:
    """γ: 1 on the background, k_j on region j."""

    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if any(not k > 0.0 for k in self.values):
            raise ValueError(f"Conductivities must be positive, got {self.values}")

    @classmethod
    def from_inclusions(cls, incl: InclusionSet) -> "ConductivityMap":
        return cls(tuple(incl.conductivities))

    @classmethod
    def background(cls, n_regions: int = 0) -> "ConductivityMap":
        return cls((1.0,) * n_regions)

    def per_triangle(self, mesh: Mesh) -> FloatArray:
        gamma = np.ones(mesh.n_triangles)
        for j, k in enumerate(self.values):
            gamma[mesh.regions == j] = k
        if np.any(mesh.regions >= len(self.values)):
            raise MeshError(
                f"Mesh has {int(mesh.regions.max()) + 1} inclusion regions, "
                f"conductivity map covers {len(self.values)}"
            )
        return gamma


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Piecewise-constant Neumann data, one (possibly complex) value per boundary edge."""

    values: np.ndarray

    def integral(self, mesh: Mesh) -> complex:
        return complex(np.dot(self.values, mesh.boundary_lengths))

    def abs_integral(self, mesh: Mesh) -> float:
        return float(np.dot(np.abs(self.values), mesh.boundary_lengths))

    def load(self, mesh: Mesh) -> np.ndarray:
        """b_i = ∫_{∂Ω} g φ_i by the midpoint rule on every boundary edge."""
        b = np.zeros(mesh.n_nodes, dtype=np.result_type(self.values, float))
        half = 0.5 * self.values * mesh.boundary_lengths
        np.add.at(b, mesh.boundary_edges[:, 0], half)
        np.add.at(b, mesh.boundary_edges[:, 1], half)
        return b

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        return BoundaryData(self.values + other.values)

    def __mul__(self, factor: complex) -> "BoundaryData":
        return BoundaryData(self.values * factor)

    __rmul__ = __mul__


def boundary_data_from_function(
    mesh: Mesh, fn: Callable[[FloatArray, FloatArray], np.ndarray]
) -> BoundaryData:
    """Sample fn(x, y) at boundary edge midpoints."""
    mid = mesh.boundary_midpoints
    return BoundaryData(np.asarray(fn(mid[:, 0], mid[:, 1])))


def fourier_mode(mesh: Mesh, n: int, phase: float = 0.0, center: Sequence[float] = (0.0, 0.0)) -> BoundaryData:
    """g = cos(n(θ − phase)) at boundary edge midpoints."""
    mid = mesh.boundary_midpoints - np.asarray(center, dtype=float)
    theta = np.arctan2(mid[:, 1], mid[:, 0])
    return BoundaryData(np.cos(n * (theta - phase)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values over a mesh, gauged to zero boundary mean."""

    mesh: Mesh
    values: np.ndarray
    gauge: Gauge = Gauge.BOUNDARY_MEAN

    def boundary_mean(self) -> complex:
        c = self.mesh.boundary_mass
        return complex(np.dot(c, self.values) / c.sum())

    def triangle_gradients(self) -> np.ndarray:
        """(nt, 2) constant gradient on every triangle."""
        v = self.values[self.mesh.triangles]
        return np.asarray(np.einsum("tk,tkd->td", v, self.mesh.triangle_gradients))

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.mesh, self.values - other.values, self.gauge)

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.mesh, -self.values, self.gauge)


# ── Assembly ──────────────────────────────────────────────────────────────────


def element_matrices(mesh: Mesh, gamma: FloatArray) -> FloatArray:
    """(nt, 3, 3) element stiffness γ_T ∫_T ∇φ_i·∇φ_j."""
    areas = mesh.triangle_areas
    if np.any(areas <= 0.0):
        bad = int(np.flatnonzero(areas <= 0.0)[0])
        raise MeshError(f"Degenerate or inverted triangle {bad} (area {areas[bad]:.3g})")
    g = mesh.triangle_gradients
    return np.asarray((gamma * areas)[:, None, None] * np.einsum("tid,tjd->tij", g, g))


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Assembled stiffness matrix of one conductivity on one mesh."""

    mesh: Mesh
    matrix: csr_matrix
    gamma: FloatArray

    @property
    def ndof(self) -> int:
        return self.mesh.n_nodes

    def preconditioner(self) -> LinearOperator:
        inv = 1.0 / self.matrix.diagonal()
        return LinearOperator(self.matrix.shape, matvec=lambda x: inv * x, dtype=float)


def assemble(m: Mesh, c: ConductivityMap) -> FemSystem:
    """Assemble A_ij = Σ_T γ_T ∫_T ∇φ_i·∇φ_j."""
    gamma = c.per_triangle(m)
    ke = element_matrices(m, gamma)
    rows = np.repeat(m.triangles, 3, axis=1)
    cols = np.tile(m.triangles, (1, 3))
    matrix = coo_matrix((ke.ravel(), (rows.ravel(), cols.ravel())), shape=(m.n_nodes, m.n_nodes)).tocsr()
    return FemSystem(m, matrix, gamma)


# ── Solves ────────────────────────────────────────────────────────────────────


def _pcg(matrix: csr_matrix, rhs: FloatArray, M: LinearOperator, settings: SolverSettings) -> FloatArray:
    norm_b = float(np.linalg.norm(rhs))
    maxiter = int(settings.maxiter_factor * math.sqrt(len(rhs)))
    history: list[float] = []

    def record(xk: FloatArray) -> None:
        history.append(float(np.linalg.norm(matrix @ xk - rhs)) / norm_b)

    x, info = cg(matrix, rhs, rtol=settings.rtol, atol=0.0, maxiter=maxiter, M=M, callback=record)
    residual = float(np.linalg.norm(matrix @ x - rhs)) / norm_b
    if info != 0:
        raise SolverError(
            f"Conjugate gradients did not converge in {maxiter} iterations "
            f"(relative residual {residual:.3e})",
            history,
        )
    if residual > settings.residual_tol:
        raise SolverError(
            f"Relative residual {residual:.3e} exceeds {settings.residual_tol:.1e}",
            history,
        )
    logger.debug("CG converged in %d iterations, residual %.2e", len(history), residual)
    return np.asarray(x)


def _solve_real(
    system: FemSystem,
    b: FloatArray,
    settings: SolverSettings,
    gauge: Gauge,
    pin: int,
) -> FloatArray:
    mesh = system.mesh
    if not np.any(b):
        return np.zeros(mesh.n_nodes)
    c = mesh.boundary_mass
    # Lagrange multiplier of ∫_{∂Ω} u = 0 absorbs the incompatible part of b
    lam = b.sum() / c.sum()
    rhs = b - lam * c

    if gauge is Gauge.BOUNDARY_MEAN:
        u = _pcg(system.matrix, rhs, system.preconditioner(), settings)
        return np.asarray(u - np.dot(c, u) / c.sum())

    keep = np.ones(mesh.n_nodes)
    keep[pin] = 0.0
    mask = diags(keep)
    pinned = (mask @ system.matrix @ mask + diags(1.0 - keep)).tocsr()
    rhs = rhs * keep
    inv = 1.0 / pinned.diagonal()
    M = LinearOperator(pinned.shape, matvec=lambda x: inv * x, dtype=float)
    return _pcg(pinned, rhs, M, settings)


def solve_neumann(
    system: FemSystem,
    g: BoundaryData,
    settings: SolverSettings | None = None,
    gauge: Gauge = Gauge.BOUNDARY_MEAN,
    pin: int = 0,
    check_mean: bool = True,
) -> ScalarField:
    """Solve ∇·γ∇u = 0, ∂u/∂ν = g; complex data as two real solves.

    Args:
        system: Assembled system
        g: Neumann data
        settings: Solver tolerances (defaults from config.toml)
        gauge: BOUNDARY_MEAN (∫_{∂Ω} u = 0) or PINNED (u[pin] = 0)
        pin: Node fixed to zero under the PINNED gauge
        check_mean: Reject data whose integral exceeds the compatibility tolerance

    Returns:
        The discrete potential in the requested gauge

    Raises:
        SolverError: If g is not zero-mean or the iteration fails
    """
    settings = settings or SolverSettings()
    mesh = system.mesh
    if check_mean:
        total = abs(g.integral(mesh))
        scale = g.abs_integral(mesh)
        if total > settings.zero_mean_rtol * scale:
            raise SolverError(
                f"Neumann data is not zero-mean: |∫g| = {total:.3e} "
                f"exceeds {settings.zero_mean_rtol:.0e} × ∫|g| = {scale:.3e}"
            )
    return solve_load(system, g.load(mesh), settings, gauge, pin)


def solve_load(
    system: FemSystem,
    b: np.ndarray,
    settings: SolverSettings | None = None,
    gauge: Gauge = Gauge.BOUNDARY_MEAN,
    pin: int = 0,
) -> ScalarField:
    """Solve Au = b for an assembled load vector (boundary and volume terms).

    The part of b that is not orthogonal to the constants is absorbed by the
    multiplier of ∫_{∂Ω} u = 0.

    Returns:
        The discrete potential; complex loads give a complex field

    Raises:
        SolverError: If the iteration fails
    """
    settings = settings or SolverSettings()
    if np.iscomplexobj(b):
        values = _solve_real(system, b.real, settings, gauge, pin) + 1j * _solve_real(
            system, b.imag, settings, gauge, pin
        )
    else:
        values = _solve_real(system, np.asarray(b, dtype=float), settings, gauge, pin)
    return ScalarField(system.mesh, values, gauge)


def lambda_pq(field: ScalarField, P: int, Q: int) -> complex:
    """u(P) − u(Q) for boundary nodes P and Q."""
    for name, node in (("P", P), ("Q", Q)):
        if not field.mesh.is_boundary_node(node):
            raise MeshError(f"Node {name} = {node} is not a boundary node")
    return complex(field.values[P] - field.values[Q])


class ForwardModel:
    """Systems for γ and for γ ≡ 1 assembled once on a shared mesh."""

    def __init__(self, mesh: Mesh, incl: InclusionSet, settings: SolverSettings | None = None) -> None:
        self.mesh = mesh
        self.incl = incl
        self.settings = settings or SolverSettings()
        self.system = assemble(mesh, ConductivityMap.from_inclusions(incl))
        self.reference = assemble(mesh, ConductivityMap.background(len(incl)))

    def solve(self, g: BoundaryData, background: bool = False, check_mean: bool = True) -> ScalarField:
        system = self.reference if background else self.system
        return solve_neumann(system, g, self.settings, check_mean=check_mean)

    def measure(self, g: BoundaryData, P: int, Q: int, background: bool = False) -> complex:
        """Λ_γ(P,Q)g, or Λ_1(P,Q)g when background is set."""
        return lambda_pq(self.solve(g, background), P, Q)

    def gap(self, g: BoundaryData, P: int, Q: int) -> complex:
        """{Λ_γ(P,Q) − Λ_1(P,Q)}g."""
        return self.measure(g, P, Q) - self.measure(g, P, Q, background=True)

    def respond(self, b: np.ndarray, P: int, Q: int) -> complex:
        """w(P) − w(Q) for the γ-system driven by an assembled load b.

        Returns:
            The voltage difference; 0 for a vanishing load
        """
        return lambda_pq(solve_load(self.system, b, self.settings), P, Q)


def lambda_diff(
    m: Mesh,
    incl: InclusionSet,
    g: BoundaryData,
    P: int,
    Q: int,
    settings: SolverSettings | None = None,
) -> complex:
    """Measurement gap Λ_γ(P,Q)g − Λ_1(P,Q)g on one mesh."""
    return ForwardModel(m, incl, settings).gap(g, P, Q)


def energy(field: ScalarField, system: FemSystem) -> complex:
    """∫ γ|∇u|² (u* A u for complex fields)."""
    u = field.values
    return complex(np.vdot(u, system.matrix @ u))


__all__ = [
    "BoundaryData",
    "ConductivityMap",
    "FemSystem",
    "ForwardModel",
    "Gauge",
    "ScalarField",
    "SolverSettings",
    "assemble",
    "boundary_data_from_function",
    "element_matrices",
    "energy",
    "fourier_mode",
    "lambda_diff",
    "lambda_pq",
    "solve_load",
    "solve_neumann",
]
