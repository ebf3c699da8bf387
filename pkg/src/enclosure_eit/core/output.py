"""Single output funnel: CSV tables, JSON reports, nodal fields and SVG plots.

Every file carries the tool version and the configuration hash. Floats are
written with 17 significant digits so identical runs give identical bytes.
"""

import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np
from numpy.typing import ArrayLike

matplotlib.use("Agg")

from matplotlib import rcParams  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from enclosure_eit.core.geometry import DomainSpec, InclusionSet, Polygon  # noqa: E402
from enclosure_eit.core.mesh import Mesh  # noqa: E402
from enclosure_eit.core.probe import IndicatorSample  # noqa: E402

# fixed ids in SVG output
rcParams["svg.hashsalt"] = "enclosure-eit"


def format_cell(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.17g}"
    return str(value)


@dataclass(frozen=True)
class OutputHeader:
    """Provenance written at the top of every output file."""

    command: str
    config_hash: str
    version: str
    warnings: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        out = [
            f"enclosure-eit {self.version}",
            f"command: {self.command}",
            f"config: sha256:{self.config_hash}",
        ]
        out += [f"WARNING: {w}" for w in self.warnings]
        return out

    def as_dict(self) -> dict[str, object]:
        return {
            "tool": "enclosure-eit",
            "version": self.version,
            "command": self.command,
            "config_hash": self.config_hash,
            "warnings": list(self.warnings),
        }


@dataclass
class OutputWriter:
    """All files of one command go through here, from the main thread only."""

    out_dir: Path
    header: OutputHeader
    written: list[Path] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        """Register a file under the output directory and return its path."""
        path = self.out_dir / name
        self.written.append(path)
        return path

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            for line in self.header.lines():
                f.write(f"# {line}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_cell(v) for v in row])
        return path

    def write_json(self, name: str, payload: Mapping[str, object]) -> Path:
        path = self.path(name)
        document = {"meta": self.header.as_dict(), **payload}
        path.write_text(json.dumps(document, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return path

    def write_polygon(self, name: str, polygon: Polygon | None) -> Path:
        """Vertices in counter-clockwise order, one "x,y" row each."""
        rows = [] if polygon is None else [(float(x), float(y)) for x, y in polygon.vertices]
        return self.write_csv(name, ("x", "y"), rows)

    def write_field(self, name: str, mesh: Mesh, values: ArrayLike) -> Path:
        """Nodal field export: node, x, y, value."""
        data = np.asarray(values, dtype=float)
        rows = ((i, float(x), float(y), float(v)) for i, ((x, y), v) in enumerate(zip(mesh.nodes, data, strict=True)))
        return self.write_csv(name, ("node", "x", "y", "value"), rows)

    def write_figure(self, name: str, fig: Figure) -> Path:
        path = self.path(name)
        # no timestamp so reruns are byte-identical
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": " | ".join(self.header.lines())})
        return path


def _json_default(value: object) -> object:
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


# ── Plots ─────────────────────────────────────────────────────────────────────


def plot_indicator(sweeps: Mapping[float, Sequence[IndicatorSample]], title: str = "") -> Figure:
    """|I| against τ on a log scale, one line per direction angle."""
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot()
    for angle, samples in sorted(sweeps.items()):
        points = [(s.tau, s.magnitude) for s in samples if s.magnitude > 0.0]
        if not points:
            continue
        tau, mag = zip(*points, strict=True)
        ax.plot(tau, mag, marker="o", markersize=3, linewidth=1.0, label=f"θ = {angle:.3f}")
    ax.set_yscale("log")
    ax.set_xlabel("τ")
    ax.set_ylabel("|I(τ, t)|")
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(fontsize="x-small", ncols=2)
    fig.tight_layout()
    return fig


def _closed(poly: Polygon) -> tuple[list[float], list[float]]:
    xs = [float(x) for x, _ in poly.vertices]
    ys = [float(y) for _, y in poly.vertices]
    return xs + xs[:1], ys + ys[:1]


def plot_hull_overlay(
    dom: DomainSpec,
    incl: InclusionSet,
    true_hull: Polygon | None,
    estimate: Polygon | None,
    title: str = "",
) -> Figure:
    """Domain, inclusions, true convex hull and estimated hull.

    Args:
        dom: The circular domain, drawn as its boundary circle
        incl: Inclusions, filled
        true_hull: Convex hull of the inclusions, if known
        estimate: Reconstructed hull, if the reconstruction produced one
        title: Axes title

    Returns:
        A figure not attached to any pyplot state
    """
    fig = Figure(figsize=(5.5, 5.5))
    ax = fig.add_subplot()
    theta = [2.0 * math.pi * i / 360 for i in range(361)]
    cx, cy = dom.center
    ax.plot(
        [cx + dom.radius * math.cos(a) for a in theta],
        [cy + dom.radius * math.sin(a) for a in theta],
        color="0.6",
        linewidth=0.8,
    )
    for j, poly in enumerate(incl.polygons):
        xs, ys = _closed(poly)
        ax.fill(xs, ys, color="tab:gray", alpha=0.35, label="inclusions" if j == 0 else None)
    if true_hull is not None:
        ax.plot(*_closed(true_hull), color="tab:blue", linewidth=1.2, label="true hull")
    if estimate is not None:
        ax.plot(*_closed(estimate), color="tab:red", linestyle="--", linewidth=1.2, label="estimated hull")
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[1]:
        ax.legend(fontsize="small", loc="upper right")
    fig.tight_layout()
    return fig


__all__ = [
    "OutputHeader",
    "OutputWriter",
    "format_cell",
    "plot_hull_overlay",
    "plot_indicator",
]
