"""Indicator sweeps I_ω(τ, t) over the configured directions and τ grid."""

import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from rich.progress import Progress

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
    report_written,
)
from enclosure_eit.core import console
from enclosure_eit.core.forward import ForwardModel
from enclosure_eit.core.output import plot_indicator
from enclosure_eit.core.probe import IndicatorSample, indicator_sweep, rescale_sample

INDICATOR_COLUMNS = (
    "angle",
    "omega_x",
    "omega_y",
    "tau",
    "t",
    "re",
    "im",
    "abs",
    "log_abs",
    "below_noise_floor",
)


def run(
    config: Path | None = ConfigOption,
    out: Path | None = OutOption,
    jobs: int | None = JobsOption,
    seed: int | None = SeedOption,
    verbose: bool = VerboseOption,
) -> None:
    """
    Sweep the indicator over directions × τ × t and write indicator.csv.

    One forward measurement per (direction, τ) at the first t value; other t
    values follow from I(τ, t') = e^{τ(t − t')} I(τ, t).

    CSV columns: angle (rad), omega_x, omega_y, tau, t, re, im, abs,
    log_abs, below_noise_floor. Also writes indicator.svg (|I| against τ).
    """
    try:
        cfg, writer = prepare("indicator", config, out, jobs, seed, verbose)
        console.print("\n[bold]Indicator sweep[/bold]\n")
        mesh = obtain_mesh(cfg)
        model = ForwardModel(mesh, cfg.inclusions, cfg.solver)
        P, Q = measurement_nodes(mesh, cfg)
        floor = float(cfg["noise_floor"])
        t_ref = cfg.t_values[0]

        sweeps: dict[float, list[IndicatorSample]] = {}
        directions = cfg.probe_directions
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool, Progress(console=console, transient=True) as progress:
            task = progress.add_task("  Solving…", total=len(directions))
            for d in directions:
                sweeps[d.angle] = indicator_sweep(
                    model,
                    P,
                    Q,
                    d,
                    t_ref,
                    cfg.tau_grid,
                    pool,
                    float(cfg["max_failure_fraction"]),
                    tau_h_max=float(cfg["tau_h_max"]),
                    formulation=cfg["indicator_formulation"],
                )
                progress.advance(task)

        rows = []
        below = 0
        for d in directions:
            for t in cfg.t_values:
                for s in sweeps[d.angle]:
                    sample = s if t == t_ref else rescale_sample(s, t)
                    silent = s.magnitude <= floor
                    below += silent
                    rows.append(
                        (
                            d.angle,
                            d.omega[0],
                            d.omega[1],
                            sample.tau,
                            sample.t,
                            sample.value.real,
                            sample.value.imag,
                            sample.magnitude,
                            math.log(sample.magnitude) if sample.magnitude > 0.0 else float("nan"),
                            silent,
                        )
                    )

        writer.write_csv("indicator.csv", INDICATOR_COLUMNS, rows)
        writer.write_figure("indicator.svg", plot_indicator(sweeps, title=f"t = {t_ref:g}"))
        report_written(writer)

        if rows and below == len(rows):
            console.print(f"\n  [yellow]⚠[/yellow] Every |I| is below the noise floor ({floor:.0e}): no inclusion signal")
        else:
            console.print(f"\n  [green]✓[/green] {len(rows)} samples ({below} below the noise floor)")

    except KeyboardInterrupt:
        console.print("\n[yellow]Aborted.[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red bold]Error:[/red bold] {e}")
        sys.exit(exit_code_for(e))
