"""Experiment configuration files.

An experiment file is a flat JSON (or TOML, by suffix) object. Every key of
the bundled config.toml may be overridden; three keys exist only here:

    inclusions  list of {"vertices": [[x, y], ...], "conductivity": k}
    directions  explicit probe angles in radians (overrides direction_count)
    mesh_file   mesh written by `enclosure-eit mesh`, reused instead of meshing

Angles are in radians, lengths in domain units.
"""

import hashlib
import json
import logging
import math
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from enclosure_eit.config import config
from enclosure_eit.core.errors import ConfigError, EnclosureError
from enclosure_eit.core.forward import SolverSettings
from enclosure_eit.core.geometry import (
    Direction,
    DomainSpec,
    GeometricCondition,
    Inclusion,
    InclusionSet,
    Polygon,
    check_geometric_condition,
    uniform_directions,
    validate_layout,
)
from enclosure_eit.core.probe import FitModel, Formulation

logger = logging.getLogger(__name__)

_EXTRA_KEYS = {"inclusions", "directions", "mesh_file"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment: phantom, measurement, probes, tolerances, output."""

    domain: DomainSpec
    inclusions: InclusionSet
    p_angle: float
    q_angle: float
    tau_grid: tuple[float, ...]
    t_values: tuple[float, ...]
    direction_count: int
    h_target: float
    solver: SolverSettings
    output_dir: Path
    jobs: int
    seed: int
    directions: tuple[float, ...] | None = None
    mesh_file: Path | None = None
    options: Mapping[str, Any] = field(default_factory=dict)
    condition: GeometricCondition | None = None

    @property
    def probe_directions(self) -> list[Direction]:
        if self.directions is not None:
            return [Direction.from_angle(a) for a in self.directions]
        return uniform_directions(self.direction_count)

    @property
    def warnings(self) -> tuple[str, ...]:
        if self.condition is None or self.condition.satisfied:
            return ()
        return (
            f"geometric condition diam D < dist(D, ∂Ω) violated "
            f"(diam {self.condition.diam:.4g}, dist {self.condition.dist:.4g}): "
            "support estimates carry no guarantee",
        )

    def __getitem__(self, key: str) -> Any:
        """Any resolved option, e.g. cfg["noise_floor"]."""
        return self.options[key]


def _read(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _parse_inclusions(raw: Any) -> InclusionSet:
    if not isinstance(raw, list):
        raise ConfigError("'inclusions' must be a list")
    components = []
    for j, item in enumerate(raw):
        try:
            polygon = Polygon.from_vertices(item["vertices"])
            components.append(Inclusion(polygon, float(item["conductivity"])))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Inclusion {j} needs 'vertices' and 'conductivity' ({e})") from None
        except EnclosureError as e:
            raise ConfigError(f"Inclusion {j}: {e}") from None
    try:
        return InclusionSet(tuple(components))
    except EnclosureError as e:
        raise ConfigError(str(e)) from None


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def resolve_experiment(data: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Merge user keys over the bundled defaults and validate.

    Returns:
        The resolved configuration with inclusions, directions and paths parsed

    Raises:
        ConfigError: On unknown keys or any violated precondition
    """
    unknown = sorted(set(data) - set(config) - _EXTRA_KEYS)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
    opts: dict[str, Any] = {**config, **{k: v for k, v in data.items() if k not in _EXTRA_KEYS}}

    try:
        center = tuple(float(c) for c in opts["domain_center"])
        domain = DomainSpec(
            (center[0], center[1]), float(opts["domain_radius"]), int(opts["boundary_resolution"])
        )
    except (TypeError, ValueError, IndexError) as e:
        raise ConfigError(f"Invalid domain: {e}") from None
    except EnclosureError as e:
        raise ConfigError(str(e)) from None

    inclusions = _parse_inclusions(data.get("inclusions", []))
    try:
        validate_layout(inclusions, domain)
    except EnclosureError as e:
        raise ConfigError(str(e)) from None

    h_target = float(opts["h_target"])
    _check(h_target > 0.0, f"h_target must be positive, got {h_target}")
    _check(h_target < domain.radius, f"h_target = {h_target} is larger than the domain (radius {domain.radius})")
    for j, poly in enumerate(inclusions.polygons):
        shortest = min(math.dist(a, b) for a, b in poly.edges)
        _check(
            h_target < shortest,
            f"h_target = {h_target} must be smaller than the shortest edge of inclusion {j} ({shortest:.4g})",
        )

    tau_grid = tuple(float(t) for t in opts["tau_grid"])
    _check(len(tau_grid) >= 2, "tau_grid needs at least two values")
    _check(all(t > 0.0 for t in tau_grid), "tau_grid values must be positive")
    _check(all(b > a for a, b in zip(tau_grid, tau_grid[1:], strict=False)), "tau_grid must be strictly increasing")
    t_values = tuple(float(t) for t in opts["t_values"])
    _check(len(t_values) >= 1, "t_values must not be empty")
    # τ(y·ω − t) ≤ τ_max(|c|·1 + R − t_min) over the whole boundary
    reach = math.hypot(*domain.center) + domain.radius
    worst = tau_grid[-1] * (reach - min(t_values))
    _check(
        worst <= float(opts["overflow_guard"]),
        f"tau_max·(R − t_min) = {worst:.1f} exceeds the overflow guard {opts['overflow_guard']}: rescale t or τ",
    )
    _check(int(opts["direction_count"]) >= 3, "direction_count must be at least 3")
    _check(int(opts["jobs"]) >= 1, "jobs must be at least 1")
    _check(int(opts["min_window"]) >= 3, "min_window must be at least 3")
    _check(0.0 < float(opts["oracle_rho"]) < 1.0, "oracle_rho must lie in (0, 1)")
    _check(float(opts["oracle_k"]) > 0.0, "oracle_k must be positive")
    _check(all(int(n) >= 1 for n in opts["oracle_modes"]), "oracle_modes must be positive integers")
    try:
        FitModel(opts["fit_model"])
    except ValueError:
        raise ConfigError(f"fit_model must be one of {[m.value for m in FitModel]}") from None
    try:
        Formulation(opts["indicator_formulation"])
    except ValueError:
        raise ConfigError(
            f"indicator_formulation must be one of {[f.value for f in Formulation]}"
        ) from None

    directions = data.get("directions")
    if directions is not None:
        directions = tuple(float(a) for a in directions)
        _check(len(directions) >= 1, "directions must not be empty")

    mesh_file = data.get("mesh_file")
    if mesh_file is not None:
        mesh_file = Path(mesh_file)
        if base_dir is not None and not mesh_file.is_absolute():
            mesh_file = base_dir / mesh_file

    condition = check_geometric_condition(inclusions, domain) if len(inclusions) else None
    if condition is not None and not condition.satisfied:
        logger.warning(
            "geometric condition violated: diam D = %.4g ≥ dist(D, ∂Ω) = %.4g", condition.diam, condition.dist
        )

    resolved = {**opts, "inclusions": data.get("inclusions", []), "directions": directions, "mesh_file": data.get("mesh_file")}
    return ExperimentConfig(
        domain=domain,
        inclusions=inclusions,
        p_angle=float(opts["p_angle"]),
        q_angle=float(opts["q_angle"]),
        tau_grid=tau_grid,
        t_values=t_values,
        direction_count=int(opts["direction_count"]),
        h_target=h_target,
        solver=SolverSettings(
            rtol=float(opts["cg_rtol"]),
            maxiter_factor=float(opts["cg_maxiter_factor"]),
            residual_tol=float(opts["residual_tol"]),
            zero_mean_rtol=float(opts["zero_mean_rtol"]),
        ),
        output_dir=Path(opts["output_dir"]),
        jobs=int(opts["jobs"]),
        seed=int(opts["seed"]),
        directions=directions,
        mesh_file=mesh_file,
        options=resolved,
        condition=condition,
    )


def load_experiment_config(path: Path | None) -> ExperimentConfig:
    """Load an experiment file; None gives the bundled defaults (no inclusions).

    Returns:
        The resolved configuration

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    if path is None:
        return resolve_experiment({})
    return resolve_experiment(_read(path), base_dir=path.parent)


def with_overrides(
    cfg: ExperimentConfig,
    output_dir: Path | None = None,
    jobs: int | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """Apply command-line flags on top of a loaded configuration."""
    changes: dict[str, Any] = {}
    if output_dir is not None:
        changes["output_dir"] = output_dir
    if jobs is not None:
        _check(jobs >= 1, "jobs must be at least 1")
        changes["jobs"] = jobs
    if seed is not None:
        changes["seed"] = seed
    if not changes:
        return cfg
    options = {**cfg.options, **{k: str(v) if isinstance(v, Path) else v for k, v in changes.items()}}
    return replace(cfg, options=options, **changes)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of the resolved options.

    Where results go and how many workers compute them does not enter the hash.
    """
    hashed = {k: v for k, v in cfg.options.items() if k not in {"output_dir", "jobs"}}
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


__all__ = [
    "ExperimentConfig",
    "config_hash",
    "load_experiment_config",
    "resolve_experiment",
    "with_overrides",
]
