"""Inclusion-conforming triangulation of the circular domain.

Nodes are seeded on the boundary circle, along every inclusion edge and on a
hexagonal lattice; scipy's Delaunay triangulation is rebuilt until every
inclusion edge is a mesh edge (missing edges are split at their midpoint) and
no triangle has a circumradius above h_target (oversized triangles receive a
centroid node).
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import ClassVar

import numpy as np
import shapely
from matplotlib.path import Path as MplPath
from numpy.typing import NDArray
from scipy.spatial import Delaunay, cKDTree

from enclosure_eit.core.errors import MeshError
from enclosure_eit.core.geometry import (
    DomainSpec,
    FloatArray,
    InclusionSet,
    signed_area,
    validate_layout,
)

IntArray = NDArray[np.int64]

logger = logging.getLogger(__name__)

# Lattice nodes keep this many h away from constraint nodes
_LATTICE_CLEARANCE = 0.7


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation of Ω with region tags and oriented boundary data.

    Attributes:
        nodes: (n, 2) node coordinates
        triangles: (nt, 3) counter-clockwise node triples
        regions: (nt,) region tag, BACKGROUND or the inclusion index j
        boundary_edges: (nb, 2) node pairs forming the counter-clockwise cycle of ∂Ω
        boundary_normals: (nb, 2) outward unit normals
        boundary_arc: (nb,) arc length of ∂Ω at the start of each edge
        inclusion_edges: per component, (ne, 2) node pairs forming the CCW cycle of ∂D_j
        inclusion_normals: per component, (ne, 2) unit normals pointing into D_j
        h_target: target size the mesh was generated for
    """

    BACKGROUND: ClassVar[int] = -1

    nodes: FloatArray
    triangles: IntArray
    regions: IntArray
    boundary_edges: IntArray
    boundary_normals: FloatArray
    boundary_arc: FloatArray
    inclusion_edges: tuple[IntArray, ...]
    inclusion_normals: tuple[FloatArray, ...]
    h_target: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def boundary_nodes(self) -> IntArray:
        """Boundary node indices in counter-clockwise order."""
        return np.asarray(self.boundary_edges[:, 0])

    @cached_property
    def _boundary_node_set(self) -> frozenset[int]:
        return frozenset(int(i) for i in self.boundary_nodes)

    def is_boundary_node(self, index: int) -> bool:
        return int(index) in self._boundary_node_set

    @cached_property
    def triangle_areas(self) -> FloatArray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return np.asarray(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def triangle_gradients(self) -> FloatArray:
        """(nt, 3, 2) gradients of the three barycentric hat functions."""
        p = self.nodes[self.triangles]
        area2 = 2.0 * self.triangle_areas
        grads = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            grads[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
            grads[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
        return grads

    @cached_property
    def triangle_centroids(self) -> FloatArray:
        return np.asarray(self.nodes[self.triangles].mean(axis=1))

    @cached_property
    def boundary_lengths(self) -> FloatArray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.asarray(np.linalg.norm(d, axis=1))

    @cached_property
    def boundary_midpoints(self) -> FloatArray:
        return np.asarray(self.nodes[self.boundary_edges].mean(axis=1))

    @cached_property
    def boundary_mass(self) -> FloatArray:
        """c_i = ∫_{∂Ω} φ_i for every node (zero off the boundary)."""
        c = np.zeros(self.n_nodes)
        half = 0.5 * self.boundary_lengths
        np.add.at(c, self.boundary_edges[:, 0], half)
        np.add.at(c, self.boundary_edges[:, 1], half)
        return c

    @property
    def boundary_polygon(self) -> FloatArray:
        return np.asarray(self.nodes[self.boundary_nodes])

    def inclusion_polygon(self, j: int) -> FloatArray:
        """Vertices of the discrete ∂D_j cycle (counter-clockwise)."""
        return np.asarray(self.nodes[self.inclusion_edges[j][:, 0]])

    def inclusion_triangles(self, j: int) -> IntArray:
        return np.flatnonzero(self.regions == j)

    def area(self) -> float:
        return float(self.triangle_areas.sum())

    def domain_polygon_area(self) -> float:
        return signed_area(self.boundary_polygon)


# ── Generation ────────────────────────────────────────────────────────────────


def boundary_node_count(dom: DomainSpec, h_target: float) -> int:
    """Nodes on the boundary circle: resolution·2^k, the fewest with arcs ≤ h_target.

    The count is at least max(boundary_resolution, ⌈2πR/h_target⌉), so it
    doubles with every halving of h_target once the arc bound governs. An
    even resolution keeps nodes at angles 0 and π.

    Returns:
        Number of boundary nodes (and edges)
    """
    needed = math.ceil(2.0 * math.pi * dom.radius / h_target - 1e-9)
    count = dom.boundary_resolution
    while count < needed:
        count *= 2
    return count


def _boundary_points(dom: DomainSpec, h_target: float) -> FloatArray:
    count = boundary_node_count(dom, h_target)
    theta = 2.0 * math.pi * np.arange(count) / count
    return np.asarray(dom.center_array + dom.radius * np.column_stack([np.cos(theta), np.sin(theta)]))


def _hex_lattice(dom: DomainSpec, h: float) -> FloatArray:
    cx, cy = dom.center
    dy = h * math.sqrt(3.0) / 2.0
    rows = int(math.ceil(dom.radius / dy)) + 1
    cols = int(math.ceil(dom.radius / h)) + 1
    j, i = np.meshgrid(np.arange(-rows, rows + 1), np.arange(-cols, cols + 1), indexing="ij")
    x = cx + h * (i + 0.5 * (j % 2))
    y = cy + dy * j
    return np.column_stack([x.ravel(), y.ravel()])


def _edge_keys(simplices: IntArray) -> set[tuple[int, int]]:
    e = np.vstack([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    e.sort(axis=1)
    return {(int(a), int(b)) for a, b in np.unique(e, axis=0)}


def _circumradii(points: FloatArray, simplices: IntArray) -> FloatArray:
    p = points[simplices]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    with np.errstate(divide="ignore"):
        return np.asarray(np.where(area > 0.0, a * b * c / (4.0 * area), np.inf))


def generate_mesh(
    dom: DomainSpec,
    incl: InclusionSet,
    h_target: float,
    max_passes: int = 60,
) -> Mesh:
    """Generate a conforming mesh of dom with every inclusion edge resolved.

    Args:
        dom: The circular domain
        incl: Inclusions to conform to (may be empty)
        h_target: Maximum constraint edge length and triangle circumradius
        max_passes: Cap on Delaunay rebuilds

    Raises:
        MeshError: On precondition violations or when refinement does not terminate
    """
    if not h_target > 0.0:
        raise MeshError(f"h_target must be positive, got {h_target}")
    if h_target >= dom.radius:
        raise MeshError(
            f"h_target = {h_target} is larger than the domain (radius {dom.radius})"
        )
    validate_layout(incl, dom)
    for j, poly in enumerate(incl.polygons):
        shortest = min(float(np.linalg.norm(b - a)) for a, b in poly.edges)
        if h_target >= shortest:
            raise MeshError(
                f"h_target = {h_target} must be smaller than the shortest edge "
                f"of inclusion {j} ({shortest:.4g})"
            )

    boundary = _boundary_points(dom, h_target)
    points: list[FloatArray] = [boundary]
    n_points = len(boundary)
    chains: list[list[int]] = []
    for poly in incl.polygons:
        chain: list[int] = []
        pieces: list[FloatArray] = []
        for a, b in poly.edges:
            n_sub = int(math.ceil(float(np.linalg.norm(b - a)) / h_target))
            s = np.arange(n_sub)[:, None] / n_sub
            seg = a + s * (b - a)
            chain.extend(range(n_points, n_points + n_sub))
            n_points += n_sub
            pieces.append(seg)
        points.append(np.vstack(pieces))
        chains.append(chain)

    constraint_pts = np.vstack(points)
    lattice = _hex_lattice(dom, h_target)
    inner_radius = dom.radius * math.cos(math.pi / len(boundary))
    inside = np.linalg.norm(lattice - dom.center_array, axis=1) < inner_radius
    lattice = lattice[inside]
    dist, _ = cKDTree(constraint_pts).query(lattice)
    lattice = lattice[dist >= _LATTICE_CLEARANCE * h_target]

    coords = np.vstack([constraint_pts, lattice])
    for n_pass in range(max_passes):
        tri = Delaunay(coords)
        if len(tri.coplanar):
            raise MeshError(
                f"Delaunay dropped {len(tri.coplanar)} nearly coincident nodes "
                f"(pass {n_pass}); input polygon may be degenerate"
            )
        simplices = np.asarray(tri.simplices, dtype=np.int64)
        present = _edge_keys(simplices)

        new_nodes: list[FloatArray] = []
        for j, chain in enumerate(chains):
            rebuilt: list[int] = []
            for k, a in enumerate(chain):
                b = chain[(k + 1) % len(chain)]
                rebuilt.append(a)
                if (min(a, b), max(a, b)) not in present:
                    rebuilt.append(len(coords) + len(new_nodes))
                    new_nodes.append(0.5 * (coords[a] + coords[b]))
            chains[j] = rebuilt
        if new_nodes:
            logger.debug("pass %d: split %d constraint edges", n_pass, len(new_nodes))
            coords = np.vstack([coords, np.array(new_nodes)])
            continue

        radii = _circumradii(coords, simplices)
        big = radii > h_target
        if not big.any():
            break
        logger.debug("pass %d: refining %d triangles", n_pass, int(big.sum()))
        coords = np.vstack([coords, coords[simplices[big]].mean(axis=1)])
    else:
        raise MeshError(
            f"Mesh refinement did not terminate within {max_passes} passes "
            f"({len(coords)} nodes, h_target = {h_target})"
        )

    return _assemble_mesh(coords, simplices, len(boundary), chains, h_target)


def _assemble_mesh(
    coords: FloatArray,
    simplices: IntArray,
    n_boundary: int,
    chains: list[list[int]],
    h_target: float,
) -> Mesh:
    tri = simplices.copy()
    p = coords[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = area < 0.0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    if np.any(np.abs(area) <= 1e-14 * h_target**2):
        raise MeshError("Triangulation contains degenerate triangles")

    centroids = coords[tri].mean(axis=1)
    regions = np.full(len(tri), Mesh.BACKGROUND, dtype=np.int64)
    for j, chain in enumerate(chains):
        regions[MplPath(coords[chain]).contains_points(centroids)] = j

    b_idx = np.arange(n_boundary)
    b_edges = np.column_stack([b_idx, np.roll(b_idx, -1)])
    d = coords[b_edges[:, 1]] - coords[b_edges[:, 0]]
    lengths = np.linalg.norm(d, axis=1)
    b_normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    arc = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])

    inc_edges: list[IntArray] = []
    inc_normals: list[FloatArray] = []
    for chain in chains:
        ids = np.array(chain, dtype=np.int64)
        e = np.column_stack([ids, np.roll(ids, -1)])
        de = coords[e[:, 1]] - coords[e[:, 0]]
        inc_edges.append(e)
        inc_normals.append(np.column_stack([-de[:, 1], de[:, 0]]) / np.linalg.norm(de, axis=1)[:, None])

    return Mesh(
        nodes=coords,
        triangles=tri,
        regions=regions,
        boundary_edges=b_edges,
        boundary_normals=b_normals,
        boundary_arc=arc,
        inclusion_edges=tuple(inc_edges),
        inclusion_normals=tuple(inc_normals),
        h_target=h_target,
    )


# ── Diagnostics ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class MeshDiagnostics:
    n_nodes: int
    n_triangles: int
    min_angle_deg: float
    max_circumradius: float
    conformity_violations: int
    orientation_violations: int
    tag_violations: int

    @property
    def ok(self) -> bool:
        return (
            self.conformity_violations == 0
            and self.orientation_violations == 0
            and self.tag_violations == 0
        )


def _min_angle_deg(nodes: FloatArray, triangles: IntArray) -> float:
    p = nodes[triangles]
    worst = math.pi
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        worst = min(worst, float(np.arccos(np.clip(cos, -1.0, 1.0)).min()))
    return math.degrees(worst)


def validate_mesh(m: Mesh) -> MeshDiagnostics:
    """Report quality figures and count invariant violations.

    Returns:
        Diagnostics; ok holds when every violation count is zero
    """
    orientation = int(np.count_nonzero(m.triangle_areas <= 0.0))

    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, (a, b, c) in enumerate(m.triangles):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_tris.setdefault((min(u, v), max(u, v)), []).append(t)

    boundary_keys = {(min(a, b), max(a, b)) for a, b in m.boundary_edges}
    conformity = 0
    for key, tris in edge_tris.items():
        if len(tris) > 2 or (len(tris) == 1 and key not in boundary_keys):
            conformity += 1
    conformity += sum(1 for key in boundary_keys if len(edge_tris.get(key, [])) != 1)
    for j, edges in enumerate(m.inclusion_edges):
        for a, b in edges:
            tris = edge_tris.get((min(a, b), max(a, b)), [])
            inside = sum(1 for t in tris if m.regions[t] == j)
            if len(tris) != 2 or inside != 1:
                conformity += 1

    expected = np.full(m.n_triangles, Mesh.BACKGROUND, dtype=np.int64)
    for j in range(len(m.inclusion_edges)):
        expected[MplPath(m.inclusion_polygon(j)).contains_points(m.triangle_centroids)] = j
    tags = int(np.count_nonzero(expected != m.regions))

    radii = _circumradii(m.nodes, m.triangles)
    return MeshDiagnostics(
        n_nodes=m.n_nodes,
        n_triangles=m.n_triangles,
        min_angle_deg=_min_angle_deg(m.nodes, m.triangles),
        max_circumradius=float(radii.max()),
        conformity_violations=conformity,
        orientation_violations=orientation,
        tag_violations=tags,
    )


def snap_boundary_point(m: Mesh, p: tuple[float, float] | FloatArray) -> int:
    """Index of the boundary node nearest to p.

    Returns:
        Node index; its coordinates replace p downstream

    Raises:
        MeshError: If p is farther than h_target from ∂Ω
    """
    pt = np.asarray(p, dtype=float)
    ring = shapely.LinearRing(m.boundary_polygon)
    distance = float(ring.distance(shapely.Point(pt)))
    if distance > m.h_target:
        raise MeshError(
            f"Point ({pt[0]:.4g}, {pt[1]:.4g}) is {distance:.3g} from the boundary "
            f"(more than h_target = {m.h_target})"
        )
    candidates = m.boundary_nodes
    k = int(np.argmin(np.linalg.norm(m.nodes[candidates] - pt, axis=1)))
    return int(candidates[k])


# ── Text format ───────────────────────────────────────────────────────────────

_HEADER = "# enclosure-eit mesh v1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_mesh(m: Mesh, path: Path, comments: Sequence[str] = ()) -> None:
    """Write the sectioned text format (17 significant digits).

    Args:
        m: Mesh to write
        path: Destination file
        comments: Extra "# " lines placed after the header (provenance)
    """
    lines = [_HEADER, f"# h_target {_fmt(m.h_target)}"]
    lines += [f"# {c}" for c in comments]
    lines.append(f"NODES {m.n_nodes}")
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in m.nodes]
    lines.append(f"TRIANGLES {m.n_triangles}")
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(m.triangles, m.regions, strict=True)]
    lines.append(f"BOUNDARY_EDGES {len(m.boundary_edges)}")
    lines += [
        f"{a} {b} {_fmt(nx)} {_fmt(ny)} {_fmt(s)}"
        for (a, b), (nx, ny), s in zip(m.boundary_edges, m.boundary_normals, m.boundary_arc, strict=True)
    ]
    lines.append(f"INCLUSION_EDGES {len(m.inclusion_edges)}")
    for j, (edges, normals) in enumerate(zip(m.inclusion_edges, m.inclusion_normals, strict=True)):
        lines.append(f"COMPONENT {j} {len(edges)}")
        lines += [f"{a} {b} {_fmt(nx)} {_fmt(ny)}" for (a, b), (nx, ny) in zip(edges, normals, strict=True)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mesh(path: Path) -> Mesh:
    """Read a mesh written by write_mesh.

    Returns:
        The mesh, with h_target as recorded in the file

    Raises:
        MeshError: If the file is missing or malformed
    """
    if not path.exists():
        raise MeshError(f"mesh not found: {path}")
    raw = path.read_text(encoding="utf-8").splitlines()
    if not raw or raw[0] != _HEADER:
        raise MeshError(f"{path} is not an enclosure-eit mesh file")
    h_target = float(raw[1].split()[2])
    body = iter([line for line in raw[2:] if not line.startswith("#")])

    def section(name: str) -> int:
        tag, count = next(body).split()[:2]
        if tag != name:
            raise MeshError(f"Expected section {name}, found {tag}")
        return int(count)

    try:
        nodes = np.array([[float(v) for v in next(body).split()] for _ in range(section("NODES"))])
        tri_rows = [[int(v) for v in next(body).split()] for _ in range(section("TRIANGLES"))]
        b_rows = [next(body).split() for _ in range(section("BOUNDARY_EDGES"))]
        inc_edges: list[IntArray] = []
        inc_normals: list[FloatArray] = []
        for _ in range(section("INCLUSION_EDGES")):
            _, _, count = next(body).split()
            rows = [next(body).split() for _ in range(int(count))]
            inc_edges.append(np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64))
            inc_normals.append(np.array([[float(r[2]), float(r[3])] for r in rows]))
    except (StopIteration, ValueError, IndexError) as e:
        raise MeshError(f"Malformed mesh file {path}: {e}") from None

    tri = np.array(tri_rows, dtype=np.int64)
    return Mesh(
        nodes=nodes,
        triangles=tri[:, :3],
        regions=tri[:, 3],
        boundary_edges=np.array([[int(r[0]), int(r[1])] for r in b_rows], dtype=np.int64),
        boundary_normals=np.array([[float(r[2]), float(r[3])] for r in b_rows]),
        boundary_arc=np.array([float(r[4]) for r in b_rows]),
        inclusion_edges=tuple(inc_edges),
        inclusion_normals=tuple(inc_normals),
        h_target=h_target,
    )


__all__ = [
    "Mesh",
    "MeshDiagnostics",
    "boundary_node_count",
    "generate_mesh",
    "read_mesh",
    "snap_boundary_point",
    "validate_mesh",
    "write_mesh",
]
