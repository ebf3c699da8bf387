"""Conforming mesh generation and validation."""

import sys
from dataclasses import asdict
from pathlib import Path

from enclosure_eit.commands.common import (
    ConfigOption,
    ExitCode,
    OutOption,
    VerboseOption,
    exit_code_for,
    prepare,
    print_table,
    report_written,
)
from enclosure_eit.core import console
from enclosure_eit.core.mesh import generate_mesh, validate_mesh, write_mesh


def run(
    config: Path | None = ConfigOption,
    out: Path | None = OutOption,
    verbose: bool = VerboseOption,
) -> None:
    """
    Mesh the configured phantom and check every mesh invariant.

    Writes mesh.txt (sectioned text format, reusable through the mesh_file
    key) and mesh_diagnostics.json. Exits 3 when an invariant fails.
    """
    try:
        cfg, writer = prepare("mesh", config, out, None, None, verbose)
        console.print("\n[bold]Generating mesh[/bold]\n")
        with console.status(f"  Meshing (h_target = {cfg.h_target})…"):
            mesh = generate_mesh(cfg.domain, cfg.inclusions, cfg.h_target, int(cfg["mesh_max_passes"]))
        diagnostics = validate_mesh(mesh)

        write_mesh(mesh, writer.path("mesh.txt"), comments=writer.header.lines())
        writer.write_json(
            "mesh_diagnostics.json",
            {
                "h_target": cfg.h_target,
                "boundary_edges": len(mesh.boundary_edges),
                "area": mesh.area(),
                "domain_polygon_area": mesh.domain_polygon_area(),
                "ok": diagnostics.ok,
                **asdict(diagnostics),
            },
        )
        print_table(
            "Mesh diagnostics",
            ["nodes", "triangles", "min angle", "max circumradius", "violations"],
            [
                [
                    str(diagnostics.n_nodes),
                    str(diagnostics.n_triangles),
                    f"{diagnostics.min_angle_deg:.2f}°",
                    f"{diagnostics.max_circumradius:.4f}",
                    str(
                        diagnostics.conformity_violations
                        + diagnostics.orientation_violations
                        + diagnostics.tag_violations
                    ),
                ]
            ],
        )
        report_written(writer)
        if not diagnostics.ok:
            console.print("\n  [red]✗[/red] Mesh invariants violated")
            sys.exit(ExitCode.NUMERICAL)
        console.print("\n  [green]✓[/green] Mesh valid")

    except KeyboardInterrupt:
        console.print("\n[yellow]Aborted.[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red bold]Error:[/red bold] {e}")
        sys.exit(exit_code_for(e))
