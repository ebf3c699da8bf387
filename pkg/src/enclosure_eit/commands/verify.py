"""Verification gates for the dipole solution and the representation formula."""

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import typer

from enclosure_eit.commands.common import (
    ConfigOption,
    JobsOption,
    OutOption,
    SeedOption,
    VerboseOption,
    exit_code_for,
    measurement_nodes,
    obtain_mesh,
    prepare,
    print_table,
    report_written,
)
from enclosure_eit.core import console
from enclosure_eit.core.dipole import (
    dipole_field,
    solve_corrector,
    standard_test_functions,
    verify_representation,
    verify_weak_form,
    volume_boundary_gap,
)
from enclosure_eit.core.errors import VerificationError
from enclosure_eit.core.forward import ForwardModel
from enclosure_eit.core.probe import ProbeParams


def _mark(passed: bool) -> str:
    return "[green]✓[/green]" if passed else "[red]✗[/red]"


def run(
    config: Path | None = ConfigOption,
    out: Path | None = OutOption,
    jobs: int | None = JobsOption,
    seed: int | None = SeedOption,
    verbose: bool = VerboseOption,
    flip_normals: bool = typer.Option(
        False,
        "--flip-normals",
        help="Debug: use outward inclusion normals in the representation formula",
    ),
) -> None:
    """
    Check the dipole identities against direct forward measurements.

    Gates: weak form of the dipole solution for five smooth test functions,
    forward path against the ∂D representation of the measurement gap,
    volume against boundary form, and antisymmetry under P ↔ Q.
    Writes verify.json and dipole.csv (nodal 𝒟; nan at P and Q).
    Exits 4 when a gate fails.
    """
    try:
        cfg, writer = prepare("verify", config, out, jobs, seed, verbose)
        console.print("\n[bold]Verifying the dipole identities[/bold]\n")
        mesh = obtain_mesh(cfg)
        model = ForwardModel(mesh, cfg.inclusions, cfg.solver)
        P, Q = measurement_nodes(mesh, cfg)

        with console.status("  Solving for the dipole corrector…"):
            dipole = dipole_field(mesh, cfg.inclusions, P, Q, cfg.solver)
            swapped = solve_corrector(mesh, cfg.inclusions, Q, P, cfg.solver)
        scale = max(float(np.abs(dipole.corrector.values).max()), 1.0)
        antisymmetry = float(np.abs(dipole.corrector.values + swapped.values).max()) / scale

        weak = {phi.name: verify_weak_form(dipole, phi) for phi in standard_test_functions()}

        d = cfg.probe_directions[0]
        probes = [ProbeParams(d, float(tau), cfg.t_values[0]) for tau in cfg["verify_taus"]]
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            report = verify_representation(
                model, dipole, probes, pool, flip_normals, cfg["indicator_formulation"]
            )
            volume = list(pool.map(lambda p: volume_boundary_gap(dipole, p), probes))

        weak_tol = float(cfg["weak_form_tol"])
        rep_tol = float(cfg["representation_tol"])
        vol_tol = float(cfg["volume_boundary_tol"])
        gates = {
            "weak_form": max(weak.values()) <= weak_tol,
            "representation": report.passed(rep_tol),
            "volume_boundary": max(volume, default=0.0) <= vol_tol,
            "antisymmetry": antisymmetry <= 1e-6,
        }

        writer.write_json(
            "verify.json",
            {
                "mesh": {
                    "h_target": mesh.h_target,
                    "nodes": mesh.n_nodes,
                    "triangles": mesh.n_triangles,
                    "boundary_edges": len(mesh.boundary_edges),
                },
                "P": {"node": P, "point": mesh.nodes[P].tolist()},
                "Q": {"node": Q, "point": mesh.nodes[Q].tolist()},
                "flip_normals": flip_normals,
                "tolerances": {
                    "weak_form": weak_tol,
                    "representation": rep_tol,
                    "volume_boundary": vol_tol,
                    "antisymmetry": 1e-6,
                },
                "weak_form": weak,
                "representation": {
                    "median": report.median,
                    "max": report.max,
                    "probes": [
                        {
                            "tau": e.tau,
                            "t": e.t,
                            "angle": e.angle,
                            "forward": e.forward,
                            "dipole": e.dipole,
                            "discrepancy": e.discrepancy,
                        }
                        for e in report.entries
                    ],
                },
                "volume_boundary": volume,
                "antisymmetry": antisymmetry,
                "gates": gates,
                "passed": all(gates.values()),
            },
        )
        writer.write_field("dipole.csv", mesh, dipole.nodal_values())

        print_table(
            "Verification gates",
            ["gate", "value", "tolerance", ""],
            [
                ["weak form (max)", f"{max(weak.values()):.2e}", f"{weak_tol:.0e}", _mark(gates["weak_form"])],
                ["representation (median)", f"{report.median:.2e}", f"{rep_tol:.0e}", _mark(gates["representation"])],
                ["volume vs boundary (max)", f"{max(volume, default=0.0):.2e}", f"{vol_tol:.0e}", _mark(gates["volume_boundary"])],
                ["antisymmetry", f"{antisymmetry:.2e}", "1e-06", _mark(gates["antisymmetry"])],
            ],
        )
        report_written(writer)

        failed = [name for name, ok in gates.items() if not ok]
        if failed:
            raise VerificationError(f"Verification failed: {', '.join(failed)}")
        console.print("\n  [green]✓[/green] All verification gates passed")

    except KeyboardInterrupt:
        console.print("\n[yellow]Aborted.[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red bold]Error:[/red bold] {e}")
        sys.exit(exit_code_for(e))
