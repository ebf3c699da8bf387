"""Options and helpers shared by every subcommand."""

from enum import IntEnum
from pathlib import Path

import typer
from rich.table import Table

from enclosure_eit import __version__
from enclosure_eit.core import console, setup_logging
from enclosure_eit.core.errors import ConfigError, EnclosureError, VerificationError
from enclosure_eit.core.mesh import Mesh, generate_mesh, read_mesh, snap_boundary_point
from enclosure_eit.core.output import OutputHeader, OutputWriter
from enclosure_eit.experiment import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    with_overrides,
)


class ExitCode(IntEnum):
    SUCCESS = 0
    ERROR = 1
    CONFIG = 2
    NUMERICAL = 3
    VERIFICATION = 4


def exit_code_for(error: BaseException) -> ExitCode:
    if isinstance(error, ConfigError):
        return ExitCode.CONFIG
    if isinstance(error, VerificationError):
        return ExitCode.VERIFICATION
    if isinstance(error, EnclosureError):
        return ExitCode.NUMERICAL
    return ExitCode.ERROR


# ── Shared options ────────────────────────────────────────────────────────────

ConfigOption = typer.Option(
    None,
    "--config",
    "-c",
    exists=False,
    dir_okay=False,
    help="Experiment file (JSON, or TOML by suffix); bundled defaults when omitted",
)
OutOption = typer.Option(None, "--out", "-o", file_okay=False, help="Output directory")
JobsOption = typer.Option(None, "--jobs", "-j", min=1, help="Worker threads for the solves")
SeedOption = typer.Option(None, "--seed", help="Seed for the perturbation of non-regular directions")
VerboseOption = typer.Option(False, "--verbose", help="Show solver and fit diagnostics")


# ── Helper Functions ──────────────────────────────────────────────────────────


def prepare(
    command: str,
    config_path: Path | None,
    out: Path | None,
    jobs: int | None,
    seed: int | None,
    verbose: bool,
) -> tuple[ExperimentConfig, OutputWriter]:
    """Load the experiment, apply flags and open the output writer.

    Raises:
        ConfigError: If the experiment file is missing or invalid
    """
    setup_logging(verbose)
    cfg = with_overrides(load_experiment_config(config_path), out, jobs, seed)
    header = OutputHeader(command, config_hash(cfg), __version__, cfg.warnings)
    for warning in cfg.warnings:
        console.print(f"[yellow]⚠ {warning}[/yellow]")
    return cfg, OutputWriter(cfg.output_dir, header)


def obtain_mesh(cfg: ExperimentConfig) -> Mesh:
    """The configured mesh file, or a fresh mesh of the configured phantom."""
    if cfg.mesh_file is not None:
        with console.status(f"  Reading mesh {cfg.mesh_file}…"):
            mesh = read_mesh(cfg.mesh_file)
        if len(mesh.inclusion_edges) != len(cfg.inclusions):
            raise ConfigError(
                f"{cfg.mesh_file} resolves {len(mesh.inclusion_edges)} inclusions, "
                f"the configuration has {len(cfg.inclusions)}"
            )
        return mesh
    with console.status(f"  Meshing (h_target = {cfg.h_target})…"):
        mesh = generate_mesh(cfg.domain, cfg.inclusions, cfg.h_target, int(cfg["mesh_max_passes"]))
    console.print(
        f"  [green]✓[/green] Mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles"
    )
    return mesh


def measurement_nodes(mesh: Mesh, cfg: ExperimentConfig) -> tuple[int, int]:
    """Boundary nodes nearest to the configured P and Q angles."""
    P = snap_boundary_point(mesh, cfg.domain.boundary_point(cfg.p_angle))
    Q = snap_boundary_point(mesh, cfg.domain.boundary_point(cfg.q_angle))
    if P == Q:
        raise ConfigError("P and Q snap to the same boundary node")
    return P, Q


def print_table(title: str, columns: list[str], rows: list[list[str]]) -> None:
    table = Table(title=title, title_justify="left")
    for name in columns:
        table.add_column(name, justify="right")
    for row in rows:
        table.add_row(*row)
    console.print(table)


def report_written(writer: OutputWriter) -> None:
    for path in writer.written:
        console.print(f"  [dim]wrote {path}[/dim]")


__all__ = [
    "ConfigOption",
    "ExitCode",
    "JobsOption",
    "OutOption",
    "SeedOption",
    "VerboseOption",
    "exit_code_for",
    "measurement_nodes",
    "obtain_mesh",
    "prepare",
    "print_table",
    "report_written",
]
