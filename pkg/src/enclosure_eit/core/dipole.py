"""Dipole solution 𝒟(P,Q;·) = V + ℰ and the identities built on it.

V is the explicit logarithmic dipole of the background problem, evaluated
analytically (never differenced). The corrector ℰ is a finite-energy FEM
field absorbing the inclusions and the boundary flux of V. With 𝒟 in hand
the measurement gap has a second, independent evaluation as a boundary
integral over ∂D, which is what the verification gates compare.
"""

import logging
import math
import statistics
from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from enclosure_eit.config import config
from enclosure_eit.core.errors import GeometryError, MeshError, VerificationError
from enclosure_eit.core.forward import (
    BoundaryData,
    ConductivityMap,
    ForwardModel,
    ScalarField,
    SolverSettings,
    assemble,
    solve_load,
)
from enclosure_eit.core.geometry import Direction, FloatArray, InclusionSet
from enclosure_eit.core.mesh import Mesh
from enclosure_eit.core.probe import Formulation, ProbeParams, indicator, probe_gradient, probe_value

logger = logging.getLogger(__name__)

_INV_PI = 1.0 / math.pi


# ── Singular part ─────────────────────────────────────────────────────────────


def _offsets(P: FloatArray, x: FloatArray) -> tuple[FloatArray, FloatArray]:
    d = np.asarray(x, dtype=float) - np.asarray(P, dtype=float)
    r2 = np.einsum("...d,...d->...", d, d)
    if np.any(r2 == 0.0):
        raise GeometryError(f"V is singular at {tuple(np.asarray(P, dtype=float))}")
    return d, r2


def v_singular(P: FloatArray, Q: FloatArray, x: FloatArray) -> FloatArray:
    """V(P,Q;x) = −(1/π)(log|P−x| − log|Q−x|).

    Returns:
        V at every point of x, shape x.shape[:-1]

    Raises:
        GeometryError: If any x coincides with P or Q
    """
    _, rp = _offsets(P, x)
    _, rq = _offsets(Q, x)
    return np.asarray(-0.5 * _INV_PI * (np.log(rp) - np.log(rq)))


def grad_v_singular(P: FloatArray, Q: FloatArray, x: FloatArray) -> FloatArray:
    """∇V = −(1/π)((x−P)/|x−P|² − (x−Q)/|x−Q|²), shape (..., 2)."""
    dp, rp = _offsets(P, x)
    dq, rq = _offsets(Q, x)
    return np.asarray(-_INV_PI * (dp / rp[..., None] - dq / rq[..., None]))


def psi_trace(P: int, Q: int, m: Mesh, rtol: float | None = None) -> BoundaryData:
    """Ψ = ∂V/∂ν at every boundary edge midpoint (real).

    ∫_{∂Ω} Ψ vanishes when P and Q lie on ∂Ω. A quadrature sum above rtol
    times the combined flux size of the two poles is logged as a warning.

    Args:
        P: Node of the source pole
        Q: Node of the sink pole
        m: Mesh whose boundary edges carry the data
        rtol: Zero-mean tolerance (default zero_mean_rtol from config.toml)

    Returns:
        Ψ per boundary edge
    """
    y = m.boundary_midpoints
    flux = []
    for node in (P, Q):
        d = y - m.nodes[node]
        flux.append(-_INV_PI * np.einsum("ed,ed->e", d, m.boundary_normals) / np.einsum("ed,ed->e", d, d))
    psi = BoundaryData(flux[0] - flux[1])
    total = abs(psi.integral(m))
    scale = BoundaryData(flux[0]).abs_integral(m) + BoundaryData(flux[1]).abs_integral(m)
    tol = float(config["zero_mean_rtol"]) if rtol is None else rtol
    if total > tol * scale:
        logger.warning(
            "Ψ is not zero-mean over ∂Ω: |∫Ψ| = %.3e exceeds %.0e × %.3e (are P and Q boundary nodes?)",
            total, tol, scale,
        )
    else:
        logger.debug("∫Ψ over ∂Ω = %.3e (pole flux %.3e)", total, scale)
    return psi


# ── Quadrature ────────────────────────────────────────────────────────────────


def _subdivide(cells: FloatArray) -> FloatArray:
    """(n, q, 3, 2) → (n, 4q, 3, 2) by edge midpoints."""
    a, b, c = cells[..., 0, :], cells[..., 1, :], cells[..., 2, :]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    children = np.stack(
        [
            np.stack([a, ab, ca], axis=-2),
            np.stack([ab, b, bc], axis=-2),
            np.stack([ca, bc, c], axis=-2),
            np.stack([ab, bc, ca], axis=-2),
        ],
        axis=-3,
    )
    n = cells.shape[0]
    return np.asarray(children.reshape(n, -1, 3, 2))


def midedge_quadrature(corners: FloatArray, levels: int = 0) -> tuple[FloatArray, FloatArray]:
    """Mid-edge rule on (n, 3, 2) triangles, optionally subdivided 4-fold per level.

    Returns:
        Points (n, q, 2) and weights (n, q); weights of a triangle sum to its area
    """
    cells = np.asarray(corners, dtype=float)[:, None]
    for _ in range(levels):
        cells = _subdivide(cells)
    mids = 0.5 * (cells + np.roll(cells, -1, axis=-2))
    e1 = cells[..., 1, :] - cells[..., 0, :]
    e2 = cells[..., 2, :] - cells[..., 0, :]
    area = 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    n = cells.shape[0]
    points = mids.reshape(n, -1, 2)
    weights = np.repeat(area / 3.0, 3, axis=-1).reshape(n, -1)
    return points, weights


# ── Dipole field ──────────────────────────────────────────────────────────────


def solve_corrector(
    m: Mesh,
    incl: InclusionSet,
    P: int,
    Q: int,
    settings: SolverSettings | None = None,
) -> ScalarField:
    """ℰ: ∇·γ∇ℰ = −∇·(γ−1)∇V in Ω, ∂ℰ/∂ν = −Ψ on ∂Ω, zero boundary mean.

    The volume load b_i = −∫(γ−1)∇V·∇φ_i lives on inclusion triangles only.

    Raises:
        MeshError: If P or Q is not a boundary node
        SolverError: If the solve fails
    """
    for name, node in (("P", P), ("Q", Q)):
        if not m.is_boundary_node(node):
            raise MeshError(f"Node {name} = {node} is not a boundary node")
    system = assemble(m, ConductivityMap.from_inclusions(incl))
    b = (-1.0 * psi_trace(P, Q, m)).load(m)

    weight = system.gamma - 1.0
    active = np.flatnonzero(weight != 0.0)
    if active.size:
        tris = m.triangles[active]
        points, weights = midedge_quadrature(m.nodes[tris])
        grad_v = grad_v_singular(m.nodes[P], m.nodes[Q], points)
        mean_grad = np.einsum("tq,tqd->td", weights, grad_v)  # ∫_T ∇V
        local = -weight[active, None] * np.einsum("tid,td->ti", m.triangle_gradients[active], mean_grad)
        np.add.at(b, tris, local)
    return solve_load(system, b, settings)


@dataclass(frozen=True, eq=False)
class DipoleField:
    """𝒟(P,Q;·) = V + ℰ on one mesh; P, Q are boundary node indices."""

    mesh: Mesh
    incl: InclusionSet
    P: int
    Q: int
    corrector: ScalarField

    @property
    def p_point(self) -> FloatArray:
        return np.asarray(self.mesh.nodes[self.P])

    @property
    def q_point(self) -> FloatArray:
        return np.asarray(self.mesh.nodes[self.Q])

    def v(self, x: FloatArray) -> FloatArray:
        return v_singular(self.p_point, self.q_point, x)

    def grad_v(self, x: FloatArray) -> FloatArray:
        return grad_v_singular(self.p_point, self.q_point, x)

    def nodal_values(self) -> FloatArray:
        """𝒟 at every node; NaN at the nodes P and Q."""
        nodes = self.mesh.nodes
        mask = np.ones(len(nodes), dtype=bool)
        mask[[self.P, self.Q]] = False
        out = np.full(len(nodes), np.nan)
        out[mask] = self.v(nodes[mask]) + np.real(self.corrector.values[mask])
        return out

    def on_edges(self, edges: FloatArray) -> FloatArray:
        """𝒟 at edge midpoints; ℰ is linear along an edge."""
        a, b = edges[:, 0], edges[:, 1]
        mid = 0.5 * (self.mesh.nodes[a] + self.mesh.nodes[b])
        e = 0.5 * (self.corrector.values[a] + self.corrector.values[b])
        return np.asarray(self.v(mid) + np.real(e))


def dipole_field(
    m: Mesh,
    incl: InclusionSet,
    P: int,
    Q: int,
    settings: SolverSettings | None = None,
) -> DipoleField:
    return DipoleField(m, incl, P, Q, solve_corrector(m, incl, P, Q, settings))


# ── Weak form ─────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TestFunction:
    """Smooth φ with its analytic gradient, both vectorised over (..., 2)."""

    name: str
    value: Callable[[FloatArray], FloatArray]
    gradient: Callable[[FloatArray], FloatArray]

    __test__ = False


def _linear(e: tuple[float, float]) -> TestFunction:
    vec = np.array(e)
    return TestFunction(
        f"x·({e[0]:g},{e[1]:g})",
        lambda x: np.asarray(x @ vec),
        lambda x: np.broadcast_to(vec, np.shape(x)).copy(),
    )


def standard_test_functions() -> list[TestFunction]:
    """Five independent smooth test functions for the weak-form gate."""
    plane = ProbeParams(Direction.from_angle(0.3), tau=2.0)
    return [
        _linear((1.0, 0.0)),
        _linear((0.0, 1.0)),
        TestFunction(
            "x²−y²",
            lambda x: x[..., 0] ** 2 - x[..., 1] ** 2,
            lambda x: np.stack([2.0 * x[..., 0], -2.0 * x[..., 1]], axis=-1),
        ),
        TestFunction(
            "xy",
            lambda x: x[..., 0] * x[..., 1],
            lambda x: np.stack([x[..., 1], x[..., 0]], axis=-1),
        ),
        TestFunction(
            "Re v(τ=2)",
            lambda x: np.real(probe_value(x, plane)),
            lambda x: np.real(probe_gradient(x, plane)),
        ),
    ]


def verify_weak_form(
    dipole: DipoleField,
    phi: TestFunction,
    radius: float | None = None,
    levels: int | None = None,
) -> float:
    """Relative residual of ∫_Ω γ∇𝒟·∇φ = φ(P) − φ(Q).

    Triangles with a vertex within radius·h of P or Q are subdivided
    `levels` times (4-fold each) before the mid-edge rule is applied.
    """
    radius = float(config["near_singular_radius"]) if radius is None else radius
    levels = int(config["near_singular_levels"]) if levels is None else levels
    m = dipole.mesh
    gamma = ConductivityMap.from_inclusions(dipole.incl).per_triangle(m)
    grad_e = np.real(dipole.corrector.triangle_gradients())
    corners = m.nodes[m.triangles]

    reach = radius * m.h_target
    dist = np.minimum(
        np.linalg.norm(corners - dipole.p_point, axis=-1).min(axis=1),
        np.linalg.norm(corners - dipole.q_point, axis=-1).min(axis=1),
    )
    near = dist < reach

    lhs = 0.0
    for group, depth in ((~near, 0), (near, levels)):
        idx = np.flatnonzero(group)
        if not idx.size:
            continue
        points, weights = midedge_quadrature(corners[idx], depth)
        grad_d = dipole.grad_v(points) + grad_e[idx, None, :]
        integrand = np.einsum("tqd,tqd->tq", grad_d, phi.gradient(points))
        lhs += float(np.sum(gamma[idx, None] * weights * integrand))

    rhs = float(phi.value(dipole.p_point) - phi.value(dipole.q_point))
    residual = abs(lhs - rhs) / max(1.0, abs(rhs))
    logger.debug("weak form %s: lhs %.6f, rhs %.6f, residual %.2e", phi.name, lhs, rhs, residual)
    return residual


# ── Representation formula ────────────────────────────────────────────────────


def rep_formula_rhs(dipole: DipoleField | None, p: ProbeParams, flip_normals: bool = False) -> complex:
    """Σ_j (k_j−1) ∮_{∂D_j} 𝒟 e^{−τt}∂v/∂ν with ν pointing into D_j.

    Args:
        dipole: Dipole field of the measurement pair
        p: Probe parameters; the e^{−τt} scaling is folded into the probe
        flip_normals: Use outward normals instead (debugging the sign convention)

    Returns:
        The boundary side of the representation formula for I_ω(τ,t)

    Raises:
        VerificationError: If no dipole field is given
    """
    if dipole is None:
        raise VerificationError("Dipole field missing: compute it before the representation formula")
    m = dipole.mesh
    sign = -1.0 if flip_normals else 1.0
    total = 0.0j
    for j, k in enumerate(dipole.incl.conductivities):
        if k == 1.0:
            continue
        edges = m.inclusion_edges[j]
        a, b = m.nodes[edges[:, 0]], m.nodes[edges[:, 1]]
        mid = 0.5 * (a + b)
        length = np.linalg.norm(b - a, axis=1)
        dv_dnu = np.einsum("ed,ed->e", probe_gradient(mid, p), sign * m.inclusion_normals[j])
        total += (k - 1.0) * complex(np.sum(length * dipole.on_edges(edges) * dv_dnu))
    return total


def rep_formula_volume(dipole: DipoleField, p: ProbeParams) -> complex:
    """−Σ_j (k_j−1) ∫_{D_j} ∇v·∇𝒟, the volume form of the same identity."""
    m = dipole.mesh
    grad_e = np.real(dipole.corrector.triangle_gradients())
    total = 0.0j
    for j, k in enumerate(dipole.incl.conductivities):
        if k == 1.0:
            continue
        idx = m.inclusion_triangles(j)
        points, weights = midedge_quadrature(m.nodes[m.triangles[idx]])
        grad_d = dipole.grad_v(points) + grad_e[idx, None, :]
        integrand = np.einsum("tqd,tqd->tq", probe_gradient(points, p), grad_d)
        total -= (k - 1.0) * complex(np.sum(weights * integrand))
    return total


def _relative(a: complex, b: complex) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def volume_boundary_gap(dipole: DipoleField, p: ProbeParams) -> float:
    """Relative gap between the volume and boundary forms of the representation."""
    return _relative(rep_formula_volume(dipole, p), rep_formula_rhs(dipole, p))


@dataclass(frozen=True)
class RepresentationEntry:
    tau: float
    t: float
    angle: float
    forward: complex
    dipole: complex

    @property
    def discrepancy(self) -> float:
        return _relative(self.forward, self.dipole)


@dataclass(frozen=True)
class RepresentationReport:
    entries: list[RepresentationEntry] = field(default_factory=list)

    @property
    def discrepancies(self) -> list[float]:
        return [e.discrepancy for e in self.entries]

    @property
    def max(self) -> float:
        return max(self.discrepancies, default=float("nan"))

    @property
    def median(self) -> float:
        return statistics.median(self.discrepancies) if self.entries else float("nan")

    def passed(self, tol: float) -> bool:
        return not self.entries or self.median <= tol


def verify_representation(
    model: ForwardModel,
    dipole: DipoleField,
    probes: Sequence[ProbeParams],
    executor: Executor | None = None,
    flip_normals: bool = False,
    formulation: Formulation | str | None = None,
) -> RepresentationReport:
    """Forward path (indicator) versus dipole path (boundary integral) per probe.

    Args:
        model: Forward model on the dipole's mesh
        dipole: Dipole field of the measurement pair
        probes: Probes to compare
        executor: Optional pool for concurrent probes
        flip_normals: Evaluate the boundary integral with outward normals
        formulation: Passed on to indicator

    Returns:
        One entry per probe, in order
    """

    def check(p: ProbeParams) -> RepresentationEntry:
        forward = indicator(model, dipole.P, dipole.Q, p, formulation).value
        return RepresentationEntry(
            p.tau, p.t, p.direction.angle, forward, rep_formula_rhs(dipole, p, flip_normals)
        )

    if executor is None:
        entries = [check(p) for p in probes]
    else:
        entries = list(executor.map(check, probes))
    return RepresentationReport(entries)


__all__ = [
    "DipoleField",
    "RepresentationEntry",
    "RepresentationReport",
    "TestFunction",
    "dipole_field",
    "grad_v_singular",
    "midedge_quadrature",
    "psi_trace",
    "rep_formula_rhs",
    "rep_formula_volume",
    "solve_corrector",
    "standard_test_functions",
    "v_singular",
    "verify_representation",
    "verify_weak_form",
    "volume_boundary_gap",
]
