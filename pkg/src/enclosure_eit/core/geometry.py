"""Polygon and direction primitives.

Support functions, regularity of directions, the diameter/clearance
condition, convex-hull assembly from support samples and polygon error
metrics.
"""

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import shapely
from numpy.typing import NDArray
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial.distance import pdist

from enclosure_eit.core.errors import GeometryError

Point = tuple[float, float]
FloatArray = NDArray[np.float64]

# ── Directions ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Direction:
    """Unit vector ω together with ω⊥ = ω rotated clockwise by π/2."""

    omega: Point

    def __post_init__(self) -> None:
        norm = math.hypot(*self.omega)
        if abs(norm - 1.0) > 1e-12:
            raise GeometryError(f"Direction must be a unit vector, got |omega| = {norm}")

    @classmethod
    def from_angle(cls, theta: float) -> "Direction":
        return cls((math.cos(theta), math.sin(theta)))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Direction":
        """Normalise an arbitrary non-zero vector."""
        x, y = float(vector[0]), float(vector[1])
        norm = math.hypot(x, y)
        if norm == 0.0:
            raise GeometryError("Cannot build a direction from the zero vector")
        return cls((x / norm, y / norm))

    @property
    def omega_perp(self) -> Point:
        x, y = self.omega
        return (y, -x)

    @property
    def angle(self) -> float:
        """Polar angle in [0, 2π)."""
        angle = math.atan2(self.omega[1], self.omega[0]) % (2.0 * math.pi)
        return 0.0 if angle >= 2.0 * math.pi else angle

    @property
    def array(self) -> FloatArray:
        return np.array(self.omega, dtype=float)

    @property
    def perp_array(self) -> FloatArray:
        return np.array(self.omega_perp, dtype=float)

    @property
    def zeta(self) -> np.ndarray:
        """ω + iω⊥; ζ·ζ = 0."""
        return np.asarray(self.array + 1j * self.perp_array)

    def rotated(self, angle: float) -> "Direction":
        return Direction.from_angle(self.angle + angle)


def uniform_directions(count: int, offset: float = 0.0) -> list[Direction]:
    """Directions at angles offset + 2πk/count."""
    if count < 1:
        raise GeometryError("Direction count must be positive")
    return [Direction.from_angle(offset + 2.0 * math.pi * k / count) for k in range(count)]


# ── Polygons and inclusions ───────────────────────────────────────────────────


def signed_area(vertices: FloatArray) -> float:
    """Shoelace formula; positive for counter-clockwise vertex order."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counter-clockwise vertices."""

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise GeometryError(f"Polygon needs at least 3 vertices, got {len(self.vertices)}")
        arr = self.array
        if not np.all(np.isfinite(arr)):
            raise GeometryError("Polygon vertices must be finite")
        area = signed_area(arr)
        if area <= 0.0:
            raise GeometryError(
                f"Polygon must be counter-clockwise with positive area (signed area {area:.3g})"
            )
        if not shapely.Polygon(arr).is_valid:
            raise GeometryError("Polygon is not simple (self-intersecting boundary)")

    @classmethod
    def from_vertices(cls, points: Iterable[Sequence[float]]) -> "Polygon":
        """Build a polygon from points in either orientation."""
        pts = [(float(p[0]), float(p[1])) for p in points]
        if len(pts) >= 3 and signed_area(np.array(pts)) < 0.0:
            pts.reverse()
        return cls(tuple(pts))

    @property
    def array(self) -> FloatArray:
        return np.array(self.vertices, dtype=float)

    @property
    def area(self) -> float:
        return signed_area(self.array)

    @property
    def centroid(self) -> FloatArray:
        c = shapely.Polygon(self.array).centroid
        return np.array([c.x, c.y])

    @property
    def edges(self) -> list[tuple[FloatArray, FloatArray]]:
        arr = self.array
        return [(arr[i], arr[(i + 1) % len(arr)]) for i in range(len(arr))]

    def to_shapely(self) -> shapely.Polygon:
        return shapely.Polygon(self.array)

    def rotated(self, angle: float, center: Sequence[float] = (0.0, 0.0)) -> "Polygon":
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        origin = np.asarray(center, dtype=float)
        arr = (self.array - origin) @ rot.T + origin
        return Polygon(tuple((float(x), float(y)) for x, y in arr))


@dataclass(frozen=True)
class Inclusion:
    """One polygonal component D_j with constant conductivity k_j."""

    polygon: Polygon
    conductivity: float

    def __post_init__(self) -> None:
        if not self.conductivity > 0.0:
            raise GeometryError(f"Conductivity must be positive, got {self.conductivity}")


@dataclass(frozen=True)
class InclusionSet:
    """Finite union of pairwise disjoint polygonal inclusions.

    A conductivity equal to 1 is accepted: such a component is invisible to
    the measurement and serves null experiments.
    """

    components: tuple[Inclusion, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        shapes = [c.polygon.to_shapely() for c in self.components]
        for i in range(len(shapes)):
            for j in range(i + 1, len(shapes)):
                if shapes[i].intersects(shapes[j]):
                    raise GeometryError(
                        f"Inclusions {i} and {j} overlap or touch: disjointness violated"
                    )

    @classmethod
    def single(cls, polygon: Polygon, conductivity: float) -> "InclusionSet":
        return cls((Inclusion(polygon, conductivity),))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def polygons(self) -> list[Polygon]:
        return [c.polygon for c in self.components]

    @property
    def conductivities(self) -> list[float]:
        return [c.conductivity for c in self.components]

    @property
    def is_null(self) -> bool:
        """True when every component has the background conductivity."""
        return all(c.conductivity == 1.0 for c in self.components)

    def all_vertices(self) -> FloatArray:
        if not self.components:
            return np.empty((0, 2))
        return np.vstack([p.array for p in self.polygons])

    def diameter(self) -> float:
        verts = self.all_vertices()
        if len(verts) < 2:
            return 0.0
        return float(pdist(verts).max())

    def with_conductivities(self, values: Sequence[float]) -> "InclusionSet":
        if len(values) != len(self.components):
            raise GeometryError("One conductivity per component is required")
        return InclusionSet(
            tuple(Inclusion(c.polygon, float(k)) for c, k in zip(self.components, values, strict=True))
        )

    def rotated(self, angle: float, center: Sequence[float] = (0.0, 0.0)) -> "InclusionSet":
        return InclusionSet(
            tuple(Inclusion(c.polygon.rotated(angle, center), c.conductivity) for c in self.components)
        )


@dataclass(frozen=True)
class DomainSpec:
    """Circular conductor Ω."""

    center: Point = (0.0, 0.0)
    radius: float = 1.0
    boundary_resolution: int = 256

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise GeometryError(f"Domain radius must be positive, got {self.radius}")
        if self.boundary_resolution < 64:
            raise GeometryError(
                f"boundary_resolution must be at least 64, got {self.boundary_resolution}"
            )

    @property
    def center_array(self) -> FloatArray:
        return np.array(self.center, dtype=float)

    def boundary_distance(self, points: FloatArray) -> FloatArray:
        """Signed distance to the circle, positive inside."""
        r = np.linalg.norm(np.atleast_2d(points) - self.center_array, axis=1)
        return np.asarray(self.radius - r)

    def boundary_point(self, angle: float) -> FloatArray:
        return self.center_array + self.radius * np.array([math.cos(angle), math.sin(angle)])


def validate_layout(incl: InclusionSet, dom: DomainSpec) -> None:
    """Every inclusion must sit strictly inside the domain with positive clearance."""
    for j, poly in enumerate(incl.polygons):
        clearance = float(dom.boundary_distance(poly.array).min())
        if clearance <= 0.0:
            raise GeometryError(
                f"Inclusion {j} is not strictly inside the domain (clearance {clearance:.3g})"
            )


# ── Support function and regularity ───────────────────────────────────────────


def _vertices_of(shape: InclusionSet | Polygon) -> FloatArray:
    verts = shape.array if isinstance(shape, Polygon) else shape.all_vertices()
    if len(verts) == 0:
        raise GeometryError("no inclusion")
    return verts


def support_function(shape: InclusionSet | Polygon, d: Direction) -> float:
    """h_D(ω) = sup_{x∈D} x·ω, attained at a vertex."""
    return float((_vertices_of(shape) @ d.array).max())


def dominant_component(incl: InclusionSet, d: Direction) -> int:
    """Index of the component whose support value equals h_D(ω)."""
    values = [support_function(p, d) for p in incl.polygons]
    if not values:
        raise GeometryError("no inclusion")
    return int(np.argmax(values))


def is_regular(
    incl: InclusionSet,
    d: Direction,
    tol: float = 1e-9,
    angle_tol: float = 1e-6,
) -> bool:
    """Whether the supporting line x·ω = h_D(ω) touches ∂D at a single vertex.

    Args:
        incl: The inclusion set
        d: Direction to test
        tol: Band below the maximum, relative to diam D
        angle_tol: Angle (rad) within which an edge counts as perpendicular to ω
    """
    verts = _vertices_of(incl)
    h = float((verts @ d.array).max())
    band = tol * max(incl.diameter(), 1.0e-300)

    touching: list[FloatArray] = []
    for poly in incl.polygons:
        arr = poly.array
        proj = arr @ d.array
        for i in np.flatnonzero(proj > h - band):
            if not any(np.allclose(arr[i], v, rtol=0.0, atol=band) for v in touching):
                touching.append(arr[i])
            for nb in (arr[(i - 1) % len(arr)], arr[(i + 1) % len(arr)]):
                edge = nb - arr[i]
                cos_angle = abs(float(edge @ d.array)) / float(np.linalg.norm(edge))
                if cos_angle < math.sin(angle_tol):
                    return False
    return len(touching) == 1


# ── Condition diam D < dist(D, ∂Ω) ────────────────────────────────────────────


class GeometricCondition(NamedTuple):
    satisfied: bool
    diam: float
    dist: float


def check_geometric_condition(incl: InclusionSet, dom: DomainSpec) -> GeometricCondition:
    """Evaluate diam D < dist(D, ∂Ω) over polygon vertices."""
    verts = _vertices_of(incl)
    diam = incl.diameter()
    dist = float(dom.boundary_distance(verts).min())
    return GeometricCondition(diam < dist, diam, dist)


# ── Hull assembly from support samples ────────────────────────────────────────


@dataclass(frozen=True)
class SupportEntry:
    """One support-function sample and its diagnostics."""

    direction: Direction
    h_estimate: float
    diagnostics: dict[str, object] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class SupportTable:
    entries: tuple[SupportEntry, ...]

    def __post_init__(self) -> None:
        angles = sorted(e.direction.angle for e in self.entries)
        # the last angle is compared against the first across 2π
        pairs = zip(angles, [*angles[1:], angles[0] + 2.0 * math.pi], strict=True) if len(angles) > 1 else ()
        for a, b in pairs:
            if abs(b - a) < 1e-12:
                raise GeometryError(f"Duplicate direction at angle {a:.6f} in support table")

    @classmethod
    def from_values(cls, pairs: Iterable[tuple[Direction, float]]) -> "SupportTable":
        return cls(tuple(SupportEntry(d, float(h)) for d, h in pairs))

    def __len__(self) -> int:
        return len(self.entries)


def _largest_gap(angles: FloatArray) -> tuple[float, int, int]:
    order = np.argsort(angles)
    sorted_angles = angles[order]
    gaps = np.diff(np.append(sorted_angles, sorted_angles[0] + 2.0 * math.pi))
    k = int(np.argmax(gaps))
    return float(gaps[k]), int(order[k]), int(order[(k + 1) % len(order)])


def _describe(entries: Sequence[SupportEntry], idx: Iterable[int]) -> str:
    return ", ".join(
        f"θ={entries[i].direction.angle:.4f} (h={entries[i].h_estimate:.4g})" for i in idx
    )


def hull_from_support(table: SupportTable) -> Polygon:
    """Intersect the half-planes {x·ω ≤ ĥ(ω)} into a convex polygon.

    Returns:
        The intersection, counter-clockwise

    Raises:
        GeometryError: If the directions do not bound the intersection or the
            intersection is empty; the message names the offending directions
    """
    entries = table.entries
    if len(entries) < 3:
        raise GeometryError(f"At least 3 directions are required, got {len(entries)}")
    normals = np.array([e.direction.omega for e in entries])
    h = np.array([e.h_estimate for e in entries])
    angles = np.array([e.direction.angle for e in entries])

    gap, i, j = _largest_gap(angles)
    if gap >= math.pi - 1e-12:
        raise GeometryError(
            "Unbounded intersection: directions do not span more than a half-circle; "
            f"gap of {gap:.4f} rad between {_describe(entries, (i, j))}"
        )

    # Chebyshev centre: max r subject to ω_i·x + r ≤ h_i
    cheb = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=np.hstack([normals, np.ones((len(h), 1))]),
        b_ub=h,
        bounds=[(None, None)] * 3,
        method="highs",
    )
    if cheb.status != 0:
        raise GeometryError(f"Half-plane intersection LP failed: {cheb.message}")
    center, radius = cheb.x[:2], float(cheb.x[2])
    scale = max(float(np.abs(h).max()), 1.0)
    if radius <= 1e-12 * scale:
        # Farkas certificate: y ≥ 0, Σ y_i ω_i = 0, Σ y_i = 1, hᵀy < 0
        farkas = linprog(
            c=h,
            A_eq=np.vstack([normals.T, np.ones(len(h))]),
            b_eq=[0.0, 0.0, 1.0],
            bounds=[(0.0, None)] * len(h),
            method="highs",
        )
        offending = (
            np.flatnonzero(farkas.x > 1e-9) if farkas.status == 0 else np.arange(len(h))
        )
        raise GeometryError(
            "Empty or degenerate half-plane intersection; offending directions: "
            + _describe(entries, offending)
        )

    halfspaces = np.hstack([normals, -h[:, None]])
    pts = HalfspaceIntersection(halfspaces, center).intersections
    hull = ConvexHull(pts)
    verts = pts[hull.vertices]

    keep = [0]
    for k in range(1, len(verts)):
        if np.linalg.norm(verts[k] - verts[keep[-1]]) > 1e-12 * scale:
            keep.append(k)
    verts = verts[keep]
    if len(verts) > 3 and np.linalg.norm(verts[0] - verts[-1]) <= 1e-12 * scale:
        verts = verts[:-1]

    start = int(np.lexsort((verts[:, 1], verts[:, 0]))[0])
    verts = np.roll(verts, -start, axis=0)
    return Polygon(tuple((float(x), float(y)) for x, y in verts))


def convex_hull(incl: InclusionSet) -> Polygon:
    """Convex hull of all inclusion vertices, CCW from the lexicographic minimum."""
    verts = _vertices_of(incl)
    hull = ConvexHull(verts)
    pts = verts[hull.vertices]
    start = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    pts = np.roll(pts, -start, axis=0)
    return Polygon(tuple((float(x), float(y)) for x, y in pts))


# ── Error metrics ─────────────────────────────────────────────────────────────


def hausdorff_step(a: Polygon, b: Polygon) -> float:
    """Boundary sampling step used by hausdorff_distance: diam/2000."""
    diam = float(pdist(np.vstack([a.array, b.array])).max())
    return diam / 2000.0


def hausdorff_distance(a: Polygon, b: Polygon, step: float | None = None) -> float:
    """Symmetric Hausdorff distance between two polygon boundaries.

    Both boundaries are densified so that no sampled segment is longer than
    `step` (default hausdorff_step(a, b)).

    Returns:
        The larger of the two one-sided distances
    """
    if step is None:
        step = hausdorff_step(a, b)
    longest = max(
        float(np.linalg.norm(q - p)) for poly in (a, b) for p, q in poly.edges
    )
    densify = min(1.0, step / longest)
    ring_a = shapely.LinearRing(a.array)
    ring_b = shapely.LinearRing(b.array)
    return float(shapely.hausdorff_distance(ring_a, ring_b, densify=densify))


__all__ = [
    "Direction",
    "DomainSpec",
    "GeometricCondition",
    "Inclusion",
    "InclusionSet",
    "Point",
    "Polygon",
    "SupportEntry",
    "SupportTable",
    "check_geometric_condition",
    "convex_hull",
    "dominant_component",
    "hausdorff_distance",
    "hausdorff_step",
    "hull_from_support",
    "is_regular",
    "signed_area",
    "support_function",
    "uniform_directions",
    "validate_layout",
]
