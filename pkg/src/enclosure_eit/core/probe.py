"""CGO probes, the indicator function and support-function estimators.

The probe v_ω = e^{τx·(ω+iω⊥)} is harmonic; its Neumann trace, scaled by
e^{−τt}, is the injected current. The indicator
I_ω(τ,t) = e^{−τt}{Λ_γ(P,Q) − Λ_1(P,Q)}g_ω grows like e^{τ(h_D(ω)−t)}
up to an algebraic factor τ^{−μ}, so both the slope of log|I| in τ and the
growth/decay switch in t locate the support function h_D(ω).
"""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from enclosure_eit.config import config
from enclosure_eit.core.errors import EnclosureError, ProbeError
from enclosure_eit.core.forward import BoundaryData, ForwardModel
from enclosure_eit.core.geometry import Direction, FloatArray
from enclosure_eit.core.mesh import Mesh

logger = logging.getLogger(__name__)


class FitModel(StrEnum):
    """Model for log|I| over the fit window."""

    EXPONENTIAL = "exponential"  # c + s·τ
    EXP_POWER = "exp-power"  # c + s·τ − μ·log τ, μ ≥ 0

    @property
    def n_params(self) -> int:
        return 3 if self is FitModel.EXP_POWER else 2


class TraceRule(StrEnum):
    """Evaluation of the probe current on one boundary edge."""

    MIDPOINT = "midpoint"
    EDGE_AVERAGE = "edge-average"


class Formulation(StrEnum):
    """How the indicator evaluates the measurement gap."""

    VOLUME = "volume"  # one solve for the field scattered by the inclusions
    BOUNDARY = "boundary"  # Neumann solves for γ and for γ ≡ 1, differenced


class EstimateMethod(StrEnum):
    SLOPE_FIT = "slope-fit"
    BISECTION = "bisection"


class GrowthClass(StrEnum):
    GROWTH = "growth"
    DECAY = "decay"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class ProbeParams:
    direction: Direction
    tau: float
    t: float = 0.0

    def __post_init__(self) -> None:
        if not self.tau > 0.0:
            raise ProbeError(f"tau must be positive, got {self.tau}")


# ── Probe functions ───────────────────────────────────────────────────────────


def probe_value(x: FloatArray, p: ProbeParams) -> np.ndarray:
    """e^{−τt} v_ω(x; τ) = e^{τ(x·ω − t)} e^{iτ x·ω⊥}."""
    x = np.asarray(x, dtype=float)
    along = x @ p.direction.array
    across = x @ p.direction.perp_array
    return np.asarray(np.exp(p.tau * (along - p.t)) * np.exp(1j * p.tau * across))


def probe_gradient(x: FloatArray, p: ProbeParams) -> np.ndarray:
    """∇(e^{−τt} v_ω) = τ(ω + iω⊥) e^{−τt} v_ω, shape (..., 2)."""
    return np.asarray(p.tau * probe_value(x, p)[..., None] * p.direction.zeta)


def check_overflow(m: Mesh, p: ProbeParams, overflow_guard: float | None = None) -> float:
    """Largest exponent τ(y·ω − t) over the boundary nodes of m.

    Returns:
        The exponent; every probe value on Ω is bounded by its exponential

    Raises:
        ProbeError: If the exponent exceeds the overflow guard
    """
    guard = float(config["overflow_guard"]) if overflow_guard is None else overflow_guard
    exponent = float((p.tau * (m.nodes[m.boundary_edges[:, 0]] @ p.direction.array - p.t)).max())
    if exponent > guard:
        raise ProbeError(
            f"Probe exponent {exponent:.1f} exceeds {guard:g} (tau = {p.tau}, t = {p.t}): rescale t or τ"
        )
    return exponent


def scaled_probe_trace(
    m: Mesh,
    p: ProbeParams,
    rule: TraceRule | str = TraceRule.MIDPOINT,
    overflow_guard: float | None = None,
) -> BoundaryData:
    """e^{−τt} g_ω = τ(ζ·ν) e^{τ(y·ω − t)} e^{iτ y·ω⊥} on every boundary edge, ζ = ω + iω⊥.

    MIDPOINT evaluates the formula at the edge midpoint y; the sum around ∂Ω
    then vanishes up to a relative O((τ·edge length)²). EDGE_AVERAGE is
    exact along a straight edge with tangent s, where
    ∂v/∂ν = (ζ·ν)/(ζ·s) dv/ds, so that data is zero-mean up to rounding.

    Args:
        m: Mesh whose boundary edges carry the data
        p: Probe direction, τ and level t
        rule: MIDPOINT or EDGE_AVERAGE
        overflow_guard: Largest admissible exponent (default from config.toml)

    Returns:
        One complex current value per boundary edge

    Raises:
        ProbeError: If τ(y·ω − t) exceeds the overflow guard somewhere on ∂Ω
    """
    check_overflow(m, p, overflow_guard)
    zeta = p.direction.zeta
    if TraceRule(rule) is TraceRule.MIDPOINT:
        values = p.tau * (m.boundary_normals @ zeta) * probe_value(m.boundary_midpoints, p)
        return BoundaryData(np.asarray(values))
    ends = m.nodes[m.boundary_edges]
    lengths = m.boundary_lengths
    tangent = (ends[:, 1] - ends[:, 0]) / lengths[:, None]
    ratio = (m.boundary_normals @ zeta) / (tangent @ zeta)
    at_ends = probe_value(ends, p)
    return BoundaryData(ratio * (at_ends[:, 1] - at_ends[:, 0]) / lengths)


def scattered_probe_load(m: Mesh, gamma: FloatArray, p: ProbeParams) -> np.ndarray:
    """b_i = −∫(γ−1)∇(e^{−τt}v_ω)·∇φ_i, supported on the inclusion triangles.

    Writing u = e^{−τt}v_ω + w for the solution driven by the probe current,
    w solves ∇·γ∇w = −∇·(γ−1)∇v with zero Neumann data, and w(P) − w(Q) is
    the measurement gap. ∫_T ∇v = ∮_{∂T} v n is exact: along an edge a → b,
    ∫ v ds = |b−a| (v(b) − v(a)) / (τ ζ·(b−a)).

    Args:
        m: Conforming mesh (counter-clockwise triangles)
        gamma: Conductivity per triangle
        p: Probe parameters

    Returns:
        Complex load vector over the mesh nodes
    """
    b = np.zeros(m.n_nodes, dtype=complex)
    weight = np.asarray(gamma, dtype=float) - 1.0
    active = np.flatnonzero(weight != 0.0)
    if not active.size:
        return b
    tris = m.triangles[active]
    corners = m.nodes[tris]
    steps = np.roll(corners, -1, axis=1) - corners
    values = probe_value(corners, p)
    means = (np.roll(values, -1, axis=1) - values) / (p.tau * (steps @ p.direction.zeta))
    # |b−a|·n for the outward normal of a counter-clockwise triangle
    scaled_normals = np.stack([steps[..., 1], -steps[..., 0]], axis=-1)
    integrals = np.einsum("te,ted->td", means, scaled_normals)
    local = -weight[active, None] * np.einsum("tid,td->ti", m.triangle_gradients[active], integrals)
    np.add.at(b, tris, local)
    return b


# ── Indicator samples ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class IndicatorSample:
    tau: float
    t: float
    value: complex
    angle: float = float("nan")

    def __post_init__(self) -> None:
        if not (math.isfinite(self.value.real) and math.isfinite(self.value.imag)):
            raise ProbeError(f"Indicator overflowed at tau = {self.tau}, t = {self.t}")

    @property
    def magnitude(self) -> float:
        return abs(self.value)

    @property
    def log_magnitude(self) -> float:
        return math.log(self.magnitude) if self.magnitude > 0.0 else float("-inf")


def rescale_sample(sample: IndicatorSample, t_new: float) -> IndicatorSample:
    """I_ω(τ, t_new) = e^{τ(t − t_new)} I_ω(τ, t) from the same measurement."""
    factor = math.exp(sample.tau * (sample.t - t_new))
    return IndicatorSample(sample.tau, t_new, sample.value * factor, sample.angle)


def indicator(
    model: ForwardModel,
    P: int,
    Q: int,
    p: ProbeParams,
    formulation: Formulation | str | None = None,
) -> IndicatorSample:
    """I_ω(τ,t): the measurement gap applied to the scaled probe current.

    VOLUME solves for the scattered field only, so its accuracy follows the
    gap itself. BOUNDARY differences two solves whose values near the
    support of the probe reach e^{τ(R−t)}; the solver tolerance on those
    swamps the gap once τ(R − h_D(ω)) grows large.

    Args:
        model: Forward model of the phantom
        P: Boundary node of the first voltage point
        Q: Boundary node of the second voltage point
        p: Probe parameters
        formulation: VOLUME or BOUNDARY (default from config.toml)

    Returns:
        The sample I_ω(τ,t), tagged with the direction angle

    Raises:
        ProbeError: On overflow
        SolverError: If a solve fails
    """
    form = Formulation(formulation or config["indicator_formulation"])
    if form is Formulation.VOLUME:
        check_overflow(model.mesh, p)
        load = scattered_probe_load(model.mesh, model.system.gamma, p)
        value = model.respond(load, P, Q)
    else:
        value = model.gap(scaled_probe_trace(model.mesh, p, TraceRule.EDGE_AVERAGE), P, Q)
    return IndicatorSample(p.tau, p.t, value, p.direction.angle)


def indicator_sweep(
    model: ForwardModel,
    P: int,
    Q: int,
    d: Direction,
    t: float,
    tau_grid: Sequence[float],
    executor: Executor | None = None,
    max_failure_fraction: float | None = None,
    tau_h_max: float | None = None,
    formulation: Formulation | str | None = None,
) -> list[IndicatorSample]:
    """One independent indicator solve per τ.

    Args:
        model: Forward model of the phantom
        P: Boundary node of the first voltage point
        Q: Boundary node of the second voltage point
        d: Probe direction
        t: Level of the probe scaling
        tau_grid: Increasing τ values
        executor: Optional pool; samples are solved concurrently on it
        max_failure_fraction: Sweep fails above this fraction of failed samples
        tau_h_max: Largest τ·h_target the mesh is trusted to resolve
        formulation: Passed on to indicator

    Returns:
        The successful samples in grid order

    Raises:
        ProbeError: On a non-increasing grid, overflow, a τ beyond the mesh
            resolution, or too many failed samples
    """
    grid = [float(tau) for tau in tau_grid]
    if not grid:
        raise ProbeError("Empty tau grid")
    if any(b <= a for a, b in zip(grid, grid[1:], strict=False)):
        raise ProbeError(f"tau grid must be strictly increasing: {grid}")
    limit = float(config["max_failure_fraction"]) if max_failure_fraction is None else max_failure_fraction
    # fail fast on the overflow guard and the mesh resolution before any solve
    for tau in grid:
        check_overflow(model.mesh, ProbeParams(d, tau, t))
    resolvable = float(config["tau_h_max"]) if tau_h_max is None else tau_h_max
    if grid[-1] * model.mesh.h_target > resolvable * (1.0 + 1e-12):
        raise ProbeError(
            f"tau = {grid[-1]:g} is beyond the mesh resolution: tau·h_target = "
            f"{grid[-1] * model.mesh.h_target:.3g} exceeds tau_h_max = {resolvable:g}; "
            "refine the mesh or shorten the tau grid"
        )

    def run(tau: float) -> IndicatorSample:
        return indicator(model, P, Q, ProbeParams(d, tau, t), formulation)

    pool = executor or ThreadPoolExecutor(max_workers=1)
    try:
        futures = {tau: pool.submit(run, tau) for tau in grid}
        samples: list[IndicatorSample] = []
        failures: list[tuple[float, str]] = []
        for tau, future in futures.items():
            try:
                samples.append(future.result())
            except EnclosureError as e:
                failures.append((tau, str(e)))
                logger.warning("indicator failed at θ=%.4f, τ=%g: %s", d.angle, tau, e)
    finally:
        if executor is None:
            pool.shutdown()

    if len(failures) > limit * len(grid):
        detail = "; ".join(f"τ={tau:g}: {msg}" for tau, msg in failures)
        raise ProbeError(f"{len(failures)} of {len(grid)} samples failed: {detail}")
    return samples


# ── Estimators ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SupportEstimate:
    """Estimate of h_D(ω) with its fit diagnostics.

    mu_fit is the algebraic power the estimate already accounts for (the
    fitted μ of the exp-power model, 0 otherwise); mu_hat is the reported
    decay diagnostic.
    """

    direction: Direction | None
    h_hat: float
    method: EstimateMethod
    window: tuple[float, float]
    slope: float
    intercept: float = float("nan")
    r_squared: float = float("nan")
    mu_hat: float = float("nan")
    mu_fit: float = 0.0
    trusted: bool = True
    details: dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.window[0] < self.window[1]:
            raise ProbeError(f"Fit window must satisfy tau_min < tau_max, got {self.window}")


@dataclass(frozen=True)
class _Fit:
    start: int
    stop: int
    coef: FloatArray
    r_squared: float
    adjusted: float


def _fit_window(tau: FloatArray, y: FloatArray, model: FitModel) -> tuple[FloatArray, float, float]:
    """Least squares of y on [1, τ] or, with μ ≥ 0, on [1, τ, −log τ].

    Returns:
        Coefficients (c, s, μ) with μ = 0 for the exponential model, the R²
        and the R² adjusted for the model's parameter count
    """
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(tau), tau]), y, rcond=None)
    coef = np.append(coef, 0.0)
    if model is FitModel.EXP_POWER:
        free, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(tau), tau, -np.log(tau)]), y, rcond=None)
        # with the bound μ ≥ 0 active the optimum lies on μ = 0
        if free[2] >= 0.0:
            coef = free
    residual = y - (coef[0] + coef[1] * tau - coef[2] * np.log(tau))
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-300:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    dof = len(y) - model.n_params
    adjusted = r2 if dof <= 0 else 1.0 - (1.0 - r2) * (len(y) - 1) / dof
    return coef, r2, adjusted


def estimate_support_slope(
    samples: Sequence[IndicatorSample],
    t: float | None = None,
    model: FitModel | str | None = None,
    min_window: int | None = None,
    noise_floor: float | None = None,
    direction: Direction | None = None,
) -> SupportEstimate:
    """ĥ = t + slope of log|I_ω(τ,t)| in τ over the best contiguous window.

    Samples at other levels are brought to t through the rescaling identity.
    Windows hold at least min_window samples above the noise floor, and at
    least one more than the model has parameters. The window with the best
    adjusted R² wins; ties go to the longer, then the earlier window.

    Args:
        samples: Indicator samples of one direction
        t: Level of the fit (default: the level of the first sample)
        model: EXPONENTIAL or EXP_POWER (default from config.toml)
        min_window: Shortest admissible window
        noise_floor: Absolute |I| at or below which a sample is ignored
        direction: Direction to record (default: from the sample angles)

    Returns:
        The slope-fit estimate with its window, R² and μ̂

    Raises:
        ProbeError: If too few samples carry signal above the noise floor
    """
    model = FitModel(model or config["fit_model"])
    min_window = int(config["min_window"]) if min_window is None else min_window
    floor = float(config["noise_floor"]) if noise_floor is None else noise_floor
    if len(samples) < min_window:
        raise ProbeError(f"At least {min_window} samples are required, got {len(samples)}")
    shortest = max(min_window, model.n_params + 1)
    level = samples[0].t if t is None else t
    ordered = sorted((rescale_sample(s, level) if s.t != level else s for s in samples), key=lambda s: s.tau)

    # the floor applies to the measured values, independent of the rescaling level
    raw = {s.tau: s.magnitude for s in samples}
    usable = [s for s in ordered if raw[s.tau] > floor]
    if not usable:
        raise ProbeError(f"signal below noise floor ({floor:.1e}) for every sample")

    # contiguous runs of usable samples
    runs: list[list[IndicatorSample]] = []
    broken = True
    for s in ordered:
        if raw[s.tau] <= floor:
            broken = True
            continue
        if broken:
            runs.append([])
            broken = False
        runs[-1].append(s)
    fits: list[tuple[_Fit, list[IndicatorSample]]] = []
    for run in runs:
        tau = np.array([s.tau for s in run])
        y = np.array([s.log_magnitude for s in run])
        for start in range(len(run)):
            for stop in range(start + shortest, len(run) + 1):
                coef, r2, adj = _fit_window(tau[start:stop], y[start:stop], model)
                fits.append((_Fit(start, stop, coef, r2, adj), run))
    if not fits:
        raise ProbeError(
            f"signal below noise floor: no {shortest} consecutive samples above {floor:.1e}"
        )

    best_adj = max(f.adjusted for f, _ in fits)
    contenders = [(f, run) for f, run in fits if f.adjusted >= best_adj - 1e-10]
    best, run = max(contenders, key=lambda fr: (fr[0].stop - fr[0].start, -fr[1][fr[0].start].tau))
    window_samples = run[best.start : best.stop]
    tau = np.array([s.tau for s in window_samples])
    slope = float(best.coef[1])
    h_hat = level + slope
    mu_fit = float(best.coef[2])

    if model is FitModel.EXP_POWER:
        mu_hat = mu_fit
    else:
        at_h = np.array([s.log_magnitude for s in window_samples]) - tau * slope
        mu_hat = -float(np.polyfit(np.log(tau), at_h, 1)[0])

    logger.debug(
        "slope fit: window [%g, %g], slope %.4f, R² %.5f, μ̂ %.3f",
        tau[0], tau[-1], slope, best.r_squared, mu_hat,
    )
    if direction is None and not math.isnan(samples[0].angle):
        direction = Direction.from_angle(samples[0].angle)
    return SupportEstimate(
        direction=direction,
        h_hat=h_hat,
        method=EstimateMethod.SLOPE_FIT,
        window=(float(tau[0]), float(tau[-1])),
        slope=slope,
        intercept=float(best.coef[0]),
        r_squared=best.r_squared,
        mu_hat=mu_hat,
        mu_fit=mu_fit,
        details={"model": str(model), "t": level, "samples": len(window_samples)},
    )


def classify_growth(
    first: IndicatorSample,
    second: IndicatorSample,
    t: float,
    dead_band: float | None = None,
    mu: float = 0.0,
) -> GrowthClass:
    """Growth if τ₂^μ|I(τ₂,t)| exceeds τ₁^μ|I(τ₁,t)| beyond the dead band.

    Both samples are moved to level t through the rescaling identity, so a
    single measured pair classifies every t.

    Args:
        first: Sample at τ₁
        second: Sample at τ₂ > τ₁
        t: Level to classify
        dead_band: Relative band around ratio 1 labelled indeterminate
        mu: Power of the algebraic factor τ^{−μ} to compensate

    Returns:
        GROWTH, DECAY or INDETERMINATE
    """
    band = float(config["classifier_dead_band"]) if dead_band is None else dead_band
    if not first.tau < second.tau:
        raise ProbeError("classify_growth needs tau_1 < tau_2")
    if first.magnitude == 0.0 or second.magnitude == 0.0:
        return GrowthClass.INDETERMINATE
    log_ratio = (
        second.log_magnitude
        - first.log_magnitude
        + second.tau * (second.t - t)
        - first.tau * (first.t - t)
        + mu * math.log(second.tau / first.tau)
    )
    if log_ratio > math.log1p(band):
        return GrowthClass.GROWTH
    if log_ratio < math.log1p(-band):
        return GrowthClass.DECAY
    return GrowthClass.INDETERMINATE


def _bisect(predicate: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_support_bisection(
    model: ForwardModel,
    P: int,
    Q: int,
    d: Direction,
    t_range: tuple[float, float],
    tau_pair: tuple[float, float] | None = None,
    tol: float | None = None,
    dead_band: float | None = None,
    mu: float = 0.0,
    noise_floor: float | None = None,
    formulation: Formulation | str | None = None,
) -> SupportEstimate:
    """Bisect t for the switch between growth (t < h) and decay (t ≥ h).

    The pair I(τ₁,·), I(τ₂,·) is measured once at t_range[0]; every other
    level follows from the rescaling identity. mu > 0 compensates an
    algebraic factor τ^{−μ} in the indicator. Passing the window and mu_fit
    of a slope-fit estimate makes both estimators read the same model.

    Args:
        model: Forward model of the phantom
        P: Boundary node of the first voltage point
        Q: Boundary node of the second voltage point
        d: Probe direction
        t_range: Interval expected to contain h_D(ω)
        tau_pair: (τ₁, τ₂), default the ends of the configured τ grid
        tol: Width at which bisection stops
        dead_band: Classifier dead band
        mu: Power of the algebraic factor to compensate
        noise_floor: Absolute |I| at or below which the pair carries no signal
        formulation: Passed on to indicator

    Returns:
        The midpoint of the indeterminate band as ĥ

    Raises:
        ProbeError: If the classifier does not bracket a switch over t_range
    """
    grid = config["tau_grid"]
    tau1, tau2 = tau_pair if tau_pair is not None else (float(grid[0]), float(grid[-1]))
    tol = float(config["bisection_tol"]) if tol is None else tol
    floor = float(config["noise_floor"]) if noise_floor is None else noise_floor
    lo, hi = float(t_range[0]), float(t_range[1])
    if not lo < hi:
        raise ProbeError(f"t_range must be increasing, got {t_range}")

    first = indicator(model, P, Q, ProbeParams(d, tau1, lo), formulation)
    second = indicator(model, P, Q, ProbeParams(d, tau2, lo), formulation)
    if first.magnitude <= floor and second.magnitude <= floor:
        raise ProbeError(f"signal below noise floor ({floor:.1e}) for both probes")

    def classify(t: float) -> GrowthClass:
        return classify_growth(first, second, t, dead_band, mu)

    at_lo, at_hi = classify(lo), classify(hi)
    if at_lo is not GrowthClass.GROWTH or at_hi is not GrowthClass.DECAY:
        raise ProbeError(
            f"no bracket: classifier is '{at_lo}' at t = {lo:g} and '{at_hi}' at t = {hi:g}"
        )

    growth_edge = _bisect(lambda t: classify(t) is GrowthClass.GROWTH, lo, hi, tol)
    decay_edge = _bisect(lambda t: classify(t) is not GrowthClass.DECAY, lo, hi, tol)
    slope = (
        second.log_magnitude - first.log_magnitude + mu * math.log(tau2 / tau1)
    ) / (tau2 - tau1)
    return SupportEstimate(
        direction=d,
        h_hat=0.5 * (growth_edge + decay_edge),
        method=EstimateMethod.BISECTION,
        window=(tau1, tau2),
        slope=slope,
        mu_hat=mu,
        mu_fit=mu,
        details={
            "indeterminate_band": (growth_edge, decay_edge),
            "t_range": (lo, hi),
            "tol": tol,
        },
    )


__all__ = [
    "EstimateMethod",
    "FitModel",
    "Formulation",
    "GrowthClass",
    "IndicatorSample",
    "ProbeParams",
    "SupportEstimate",
    "TraceRule",
    "check_overflow",
    "classify_growth",
    "estimate_support_bisection",
    "estimate_support_slope",
    "indicator",
    "indicator_sweep",
    "probe_gradient",
    "probe_value",
    "rescale_sample",
    "scaled_probe_trace",
    "scattered_probe_load",
]
