"""FEM forward solver against the concentric-disk oracle."""

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from enclosure_eit.commands.common import (
    ConfigOption,
    ExitCode,
    JobsOption,
    OutOption,
    SeedOption,
    VerboseOption,
    exit_code_for,
    prepare,
    print_table,
    report_written,
)
from enclosure_eit.core import console
from enclosure_eit.core.oracle import DiskPhantom, compare_fem_oracle, gap_multiplier, radial_fd_gap

ORACLE_COLUMNS = (
    "n",
    "p_angle",
    "q_angle",
    "fem_re",
    "fem_im",
    "oracle",
    "radial_fd",
    "error",
    "multiplier",
    "multiplier_fd",
)


def run(
    config: Path | None = ConfigOption,
    out: Path | None = OutOption,
    jobs: int | None = JobsOption,
    seed: int | None = SeedOption,
    verbose: bool = VerboseOption,
) -> None:
    """
    Compare the FEM measurement gap with the disk oracle, mode by mode.

    Uses oracle_rho, oracle_k and oracle_modes from the configuration on the
    unit disk (the configured inclusions are ignored); mode n drives
    g = cos(n(θ − θ_P)) with Q at θ_P + π/n.

    oracle.csv columns: n, p_angle, q_angle, fem_re, fem_im, oracle,
    radial_fd (same gap from the radial finite-difference multiplier),
    error (relative; absolute when the oracle vanishes), multiplier,
    multiplier_fd. Exits 4 when an error exceeds oracle_tol.
    """
    try:
        cfg, writer = prepare("oracle", config, out, jobs, seed, verbose)
        console.print("\n[bold]Forward solver against the disk oracle[/bold]\n")
        phantom = DiskPhantom(float(cfg["oracle_rho"]), float(cfg["oracle_k"]))
        modes = [int(n) for n in cfg["oracle_modes"]]
        tol = float(cfg["oracle_tol"])
        points = int(cfg["oracle_fd_points"])

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool, console.status("  Meshing and solving…"):
            rows = compare_fem_oracle(
                phantom,
                modes,
                cfg.h_target,
                cfg.domain.boundary_resolution,
                cfg.p_angle,
                cfg.solver,
                pool,
                points,
            )

        table = [
            (
                r.n,
                r.p_angle,
                r.q_angle,
                r.fem.real,
                r.fem.imag,
                r.oracle,
                r.radial_fd,
                r.error,
                gap_multiplier(r.n, phantom),
                radial_fd_gap(r.n, phantom, points),
            )
            for r in rows
        ]
        writer.write_csv("oracle.csv", ORACLE_COLUMNS, table)
        print_table(
            f"Disk oracle (ρ = {phantom.rho}, k = {phantom.k})",
            ["n", "FEM", "oracle", "error", ""],
            [
                [
                    str(r.n),
                    f"{r.fem.real:.6e}",
                    f"{r.oracle:.6e}",
                    f"{r.error:.2e}",
                    "[green]✓[/green]" if r.error <= tol else "[red]✗[/red]",
                ]
                for r in rows
            ],
        )
        report_written(writer)

        if any(r.error > tol for r in rows):
            console.print(f"\n  [red]✗[/red] FEM deviates from the oracle by more than {tol:.0%}")
            sys.exit(ExitCode.VERIFICATION)
        console.print("\n  [green]✓[/green] FEM matches the oracle")

    except KeyboardInterrupt:
        console.print("\n[yellow]Aborted.[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red bold]Error:[/red bold] {e}")
        sys.exit(exit_code_for(e))
