"""Support-function estimation per direction and convex-hull reconstruction."""

import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
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
    print_table,
    report_written,
)
from enclosure_eit.core import console
from enclosure_eit.core.errors import ProbeError
from enclosure_eit.core.forward import ForwardModel
from enclosure_eit.core.geometry import (
    Direction,
    InclusionSet,
    Polygon,
    SupportTable,
    convex_hull,
    dominant_component,
    hausdorff_distance,
    hull_from_support,
    is_regular,
    support_function,
)
from enclosure_eit.core.output import plot_hull_overlay, plot_indicator
from enclosure_eit.core.probe import (
    IndicatorSample,
    SupportEstimate,
    estimate_support_bisection,
    estimate_support_slope,
    indicator_sweep,
)
from enclosure_eit.experiment import ExperimentConfig

SUPPORT_COLUMNS = (
    "angle",
    "requested_angle",
    "regular",
    "perturbed",
    "h_true",
    "h_slope",
    "h_bisection",
    "tau_min",
    "tau_max",
    "slope",
    "r_squared",
    "mu_hat",
    "dominant_component",
    "status",
)


@dataclass
class DirectionResult:
    requested: Direction
    direction: Direction
    regular: bool
    perturbed: bool
    samples: list[IndicatorSample]
    slope: SupportEstimate | None = None
    bisection: SupportEstimate | None = None
    status: str = "ok"


# ── Helper Functions ──────────────────────────────────────────────────────────


def choose_directions(cfg: ExperimentConfig) -> list[tuple[Direction, Direction, bool, bool]]:
    """(requested, used, regular, perturbed) for every configured direction.

    Non-regular directions are rotated by ±perturbation_degrees, the sign
    drawn from the seeded generator; the other sign is tried if needed.
    """
    rng = np.random.default_rng(cfg.seed)
    step = math.radians(float(cfg["perturbation_degrees"]))
    incl = cfg.inclusions
    out = []
    for d in cfg.probe_directions:
        if not len(incl):
            out.append((d, d, True, False))
            continue
        check = {"tol": float(cfg["regularity_tol"]), "angle_tol": float(cfg["regularity_angle_tol"])}
        if is_regular(incl, d, **check):
            out.append((d, d, True, False))
            continue
        sign = float(rng.choice([-1.0, 1.0]))
        used = d.rotated(sign * step)
        if not is_regular(incl, used, **check):
            used = d.rotated(-sign * step)
        out.append((d, used, False, True))
    return out


def true_hull(incl: InclusionSet) -> Polygon | None:
    if not len(incl) or incl.is_null:
        return None
    return convex_hull(incl)


def _fmt(x: float | None, spec: str = ".4f") -> str:
    return "—" if x is None or math.isnan(x) else format(x, spec)


def run(
    config: Path | None = ConfigOption,
    out: Path | None = OutOption,
    jobs: int | None = JobsOption,
    seed: int | None = SeedOption,
    verbose: bool = VerboseOption,
) -> None:
    """
    Estimate h_D(ω) per direction and intersect the half-planes into a hull.

    Writes support.csv, hull.csv (estimated hull vertices, counter-clockwise),
    reconstruction.json and hull.svg (true against estimated hull).

    support.csv columns: angle (direction used, rad), requested_angle,
    regular, perturbed (non-regular directions are rotated by ±2°), h_true,
    h_slope, h_bisection, tau_min, tau_max (fit window), slope, r_squared,
    mu_hat, dominant_component, status.
    """
    try:
        cfg, writer = prepare("reconstruct", config, out, jobs, seed, verbose)
        console.print("\n[bold]Reconstructing the convex hull[/bold]\n")
        mesh = obtain_mesh(cfg)
        model = ForwardModel(mesh, cfg.inclusions, cfg.solver)
        P, Q = measurement_nodes(mesh, cfg)
        t = cfg.t_values[0]
        reach = math.hypot(*cfg.domain.center) + cfg.domain.radius
        incl = cfg.inclusions
        has_geometry = len(incl) > 0

        results: list[DirectionResult] = []
        plan = choose_directions(cfg)
        flagged = sum(1 for _, _, regular, _ in plan if not regular)
        if flagged:
            console.print(f"  [yellow]⚠[/yellow] {flagged} non-regular directions replaced by perturbations")

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool, Progress(console=console, transient=True) as progress:
            task = progress.add_task("  Sweeping directions…", total=len(plan))
            for requested, d, regular, perturbed in plan:
                samples = indicator_sweep(
                    model,
                    P,
                    Q,
                    d,
                    t,
                    cfg.tau_grid,
                    pool,
                    float(cfg["max_failure_fraction"]),
                    tau_h_max=float(cfg["tau_h_max"]),
                    formulation=cfg["indicator_formulation"],
                )
                result = DirectionResult(requested, d, regular, perturbed, samples)
                try:
                    result.slope = estimate_support_slope(
                        samples,
                        t,
                        model=cfg["fit_model"],
                        min_window=int(cfg["min_window"]),
                        noise_floor=float(cfg["noise_floor"]),
                        direction=d,
                    )
                    result.bisection = estimate_support_bisection(
                        model,
                        P,
                        Q,
                        d,
                        (-reach, reach),
                        result.slope.window,
                        tol=float(cfg["bisection_tol"]),
                        dead_band=float(cfg["classifier_dead_band"]),
                        mu=result.slope.mu_fit,
                        noise_floor=float(cfg["noise_floor"]),
                        formulation=cfg["indicator_formulation"],
                    )
                except ProbeError as e:
                    result.status = str(e)
                results.append(result)
                progress.advance(task)

        rows = []
        for r in results:
            rows.append(
                (
                    r.direction.angle,
                    r.requested.angle,
                    r.regular,
                    r.perturbed,
                    support_function(incl, r.direction) if has_geometry else float("nan"),
                    r.slope.h_hat if r.slope else float("nan"),
                    r.bisection.h_hat if r.bisection else float("nan"),
                    r.slope.window[0] if r.slope else float("nan"),
                    r.slope.window[1] if r.slope else float("nan"),
                    r.slope.slope if r.slope else float("nan"),
                    r.slope.r_squared if r.slope else float("nan"),
                    r.slope.mu_hat if r.slope else float("nan"),
                    dominant_component(incl, r.direction) if has_geometry else -1,
                    r.status,
                )
            )
        writer.write_csv("support.csv", SUPPORT_COLUMNS, rows)
        writer.write_figure("indicator.svg", plot_indicator({r.direction.angle: r.samples for r in results}))

        estimated = [r for r in results if r.slope is not None]
        reference = true_hull(incl)
        if not estimated:
            writer.write_json("reconstruction.json", {"detected": False, "directions": len(results)})
            report_written(writer)
            console.print("\n  [yellow]⚠[/yellow] no inclusion detected: every slope fit is below the noise floor")
            return

        table = SupportTable.from_values(
            (r.direction, r.slope.h_hat) for r in estimated if r.slope is not None
        )
        hull = hull_from_support(table)
        distance = hausdorff_distance(hull, reference) if reference is not None else None

        writer.write_polygon("hull.csv", hull)
        writer.write_json(
            "reconstruction.json",
            {
                "detected": True,
                "directions": len(results),
                "estimated": len(estimated),
                "flagged": flagged,
                "hull": [list(v) for v in hull.vertices],
                "hull_area": hull.area,
                "true_hull_area": reference.area if reference is not None else None,
                "hausdorff": distance,
            },
        )
        writer.write_figure("hull.svg", plot_hull_overlay(cfg.domain, incl, reference, hull))

        print_table(
            "Support function",
            ["θ", "regular", "h true", "ĥ slope", "ĥ bisection", "R²"],
            [
                [
                    f"{r.direction.angle:.4f}",
                    "yes" if r.regular else "[yellow]no[/yellow]",
                    _fmt(support_function(incl, r.direction) if has_geometry else None),
                    _fmt(r.slope.h_hat if r.slope else None),
                    _fmt(r.bisection.h_hat if r.bisection else None),
                    _fmt(r.slope.r_squared if r.slope else None, ".5f"),
                ]
                for r in results
            ],
        )
        report_written(writer)
        if distance is not None:
            console.print(f"\n  [green]✓[/green] Hull reconstructed, Hausdorff distance {distance:.4f}")
        else:
            console.print(f"\n  [green]✓[/green] Hull reconstructed from {len(estimated)} directions")
        if len(estimated) < len(results):
            console.print(f"  [yellow]⚠[/yellow] {len(results) - len(estimated)} directions without an estimate")

    except KeyboardInterrupt:
        console.print("\n[yellow]Aborted.[/yellow]")
        sys.exit(1)
    except Exception as e:
        console.print(f"\n[red bold]Error:[/red bold] {e}")
        sys.exit(exit_code_for(e))
