"""Tests for probes, indicator sweeps and the support-function estimators."""

import math
from concurrent.futures import ThreadPoolExecutor
from types import SimpleNamespace

import numpy as np
import pytest

from enclosure_eit.core.errors import ProbeError
from enclosure_eit.core.forward import ForwardModel
from enclosure_eit.core.geometry import Direction, DomainSpec, InclusionSet, support_function
from enclosure_eit.core.mesh import generate_mesh, snap_boundary_point
from enclosure_eit.core.probe import (
    EstimateMethod,
    FitModel,
    Formulation,
    GrowthClass,
    IndicatorSample,
    ProbeParams,
    TraceRule,
    classify_growth,
    estimate_support_bisection,
    estimate_support_slope,
    indicator,
    indicator_sweep,
    probe_gradient,
    probe_value,
    rescale_sample,
    scaled_probe_trace,
    scattered_probe_load,
)

EAST = Direction((1.0, 0.0))


def _synthetic(h: float, mu: float, taus, t: float = 0.0) -> list[IndicatorSample]:
    """Samples of τ^{−μ} e^{τ(h − t)}."""
    return [IndicatorSample(tau, t, tau**-mu * math.exp(tau * (h - t)) + 0j, 0.0) for tau in taus]


def _fake_indicator(h: float, mu: float):
    def fake(model, P, Q, p, formulation=None):
        return IndicatorSample(p.tau, p.t, p.tau**-mu * math.exp(p.tau * (h - p.t)) + 0j, p.direction.angle)

    return fake


# ── Probe functions ───────────────────────────────────────────────────────────


def test_probe_params_rejects_non_positive_tau():
    with pytest.raises(ProbeError, match="tau must be positive"):
        ProbeParams(EAST, 0.0)


def test_probe_value_modulus_and_phase():
    p = ProbeParams(EAST, tau=3.0, t=0.5)
    x = np.array([[0.2, 0.1]])
    value = probe_value(x, p)[0]
    assert abs(value) == pytest.approx(math.exp(3.0 * (0.2 - 0.5)))
    # ω⊥ = (0, −1)
    assert np.angle(value) == pytest.approx(-0.3)


def test_probe_gradient_matches_finite_difference():
    p = ProbeParams(Direction.from_angle(0.7), tau=4.0, t=0.1)
    x = np.array([0.3, -0.2])
    eps = 1e-6
    grad = probe_gradient(x, p)
    for axis in range(2):
        step = np.zeros(2)
        step[axis] = eps
        fd = (probe_value(x + step, p) - probe_value(x - step, p)) / (2 * eps)
        assert complex(fd) == pytest.approx(complex(grad[axis]), rel=1e-7)


def test_probe_is_harmonic():
    """∇v·∇v = τ²(ω + iω⊥)·(ω + iω⊥)v² = 0 since ω ⊥ ω⊥ and both are unit."""
    d = Direction.from_angle(1.3)
    zeta = d.array + 1j * d.perp_array
    assert complex(zeta @ zeta) == pytest.approx(0.0, abs=1e-15)


def test_edge_average_trace_is_zero_mean(empty_mesh):
    p = ProbeParams(Direction.from_angle(0.4), 6.0)
    g = scaled_probe_trace(empty_mesh, p, TraceRule.EDGE_AVERAGE)
    assert abs(g.integral(empty_mesh)) < 1e-12 * g.abs_integral(empty_mesh)


def test_midpoint_trace_is_nearly_zero_mean(empty_mesh):
    g = scaled_probe_trace(empty_mesh, ProbeParams(Direction.from_angle(0.4), 6.0))
    assert abs(g.integral(empty_mesh)) < 1e-2 * g.abs_integral(empty_mesh)


@pytest.mark.parametrize("angle", [0.0, 0.4, 2.5])
def test_midpoint_trace_magnitude_is_tau_at_level(empty_mesh, angle):
    """|ζ·ν| = 1, so the current is exactly τ where y·ω = t."""
    d = Direction.from_angle(angle)
    edge = 5
    t = float(empty_mesh.boundary_midpoints[edge] @ d.array)
    g = scaled_probe_trace(empty_mesh, ProbeParams(d, 7.0, t))
    assert abs(g.values[edge]) == pytest.approx(7.0, rel=1e-12)


def test_trace_rules_agree_on_fine_boundary(empty_mesh):
    p = ProbeParams(Direction.from_angle(1.1), 2.0)
    midpoint = scaled_probe_trace(empty_mesh, p).values
    average = scaled_probe_trace(empty_mesh, p, "edge-average").values
    assert np.max(np.abs(midpoint - average)) < 1e-2 * np.max(np.abs(average))


def test_scaled_trace_overflow_guard(empty_mesh):
    with pytest.raises(ProbeError, match="rescale t or τ"):
        scaled_probe_trace(empty_mesh, ProbeParams(EAST, 800.0))


def test_overflow_avoided_by_shifting_t(empty_mesh):
    g = scaled_probe_trace(empty_mesh, ProbeParams(EAST, 800.0, t=0.5))
    assert np.all(np.isfinite(g.values))


# ── Indicator ─────────────────────────────────────────────────────────────────


def test_indicator_sample_rejects_overflow():
    with pytest.raises(ProbeError, match="overflowed"):
        IndicatorSample(2.0, 0.0, complex(float("inf"), 0.0))


def test_rescale_identity():
    """I(τ, t') = e^{τ(t − t')} I(τ, t), and rescaling back is the identity."""
    sample = IndicatorSample(6.0, 0.0, 0.3 - 0.4j, 0.0)
    moved = rescale_sample(sample, 0.4)
    assert moved.value == pytest.approx(sample.value * math.exp(-2.4), rel=1e-12)
    back = rescale_sample(moved, 0.0)
    assert back.value == pytest.approx(sample.value, rel=1e-12)


def test_null_phantom_indicator_vanishes(empty_mesh):
    model = ForwardModel(empty_mesh, InclusionSet())
    P = snap_boundary_point(empty_mesh, (1.0, 0.0))
    Q = snap_boundary_point(empty_mesh, (-1.0, 0.0))
    samples = indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 4.0, 6.0])
    assert all(s.magnitude < 1e-8 for s in samples)


def test_sweep_rejects_bad_grids(diamond_mesh, diamond_set, pq_nodes):
    model = ForwardModel(diamond_mesh, diamond_set)
    P, Q = pq_nodes
    with pytest.raises(ProbeError, match="Empty tau grid"):
        indicator_sweep(model, P, Q, EAST, 0.0, [])
    with pytest.raises(ProbeError, match="strictly increasing"):
        indicator_sweep(model, P, Q, EAST, 0.0, [4.0, 2.0])
    with pytest.raises(ProbeError, match="rescale t or τ"):
        indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 900.0])


def test_sweep_rejects_tau_beyond_mesh_resolution(diamond_mesh, diamond_set, pq_nodes):
    model = ForwardModel(diamond_mesh, diamond_set)
    P, Q = pq_nodes
    with pytest.raises(ProbeError, match="beyond the mesh resolution"):
        indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 12.0])
    with pytest.raises(ProbeError, match="tau_h_max = 0.3"):
        indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 4.0], tau_h_max=0.3)


@pytest.mark.parametrize("tau", [1.0, 2.0, 3.0])
def test_volume_and_boundary_formulations_agree(diamond_mesh, diamond_set, pq_nodes, tau):
    """Both read the same gap; they differ by the discretisation of the probe."""
    model = ForwardModel(diamond_mesh, diamond_set)
    P, Q = pq_nodes
    p = ProbeParams(Direction.from_angle(0.3), tau)
    volume = indicator(model, P, Q, p, Formulation.VOLUME)
    boundary = indicator(model, P, Q, p, "boundary")
    assert volume.magnitude > 0.0
    assert abs(volume.value - boundary.value) <= 0.05 * volume.magnitude


def test_scattered_load_vanishes_without_contrast(empty_mesh):
    load = scattered_probe_load(empty_mesh, np.ones(empty_mesh.n_triangles), ProbeParams(EAST, 4.0))
    assert not np.any(load)


def test_scattered_load_sums_to_zero(diamond_mesh, diamond_set):
    model = ForwardModel(diamond_mesh, diamond_set)
    load = scattered_probe_load(diamond_mesh, model.system.gamma, ProbeParams(EAST, 6.0))
    assert np.count_nonzero(load) > 0
    assert abs(load.sum()) < 1e-12 * np.abs(load).sum()


def test_sweep_with_executor_matches_serial(diamond_mesh, diamond_set, pq_nodes):
    model = ForwardModel(diamond_mesh, diamond_set)
    P, Q = pq_nodes
    serial = indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 4.0])
    with ThreadPoolExecutor(max_workers=2) as pool:
        parallel = indicator_sweep(model, P, Q, EAST, 0.0, [2.0, 4.0], pool)
    assert [s.value for s in parallel] == pytest.approx([s.value for s in serial], rel=1e-10)


def test_sweep_tolerates_few_failures(monkeypatch):
    """Failed samples are dropped until the failure fraction is exceeded."""

    def flaky(model, P, Q, p, formulation=None):
        if p.tau == 4.0:
            raise ProbeError("solver failed")
        return IndicatorSample(p.tau, p.t, 1.0 + 0j)

    monkeypatch.setattr("enclosure_eit.core.probe.indicator", flaky)
    monkeypatch.setattr("enclosure_eit.core.probe.check_overflow", lambda m, p: 0.0)
    model = SimpleNamespace(mesh=SimpleNamespace(h_target=0.1))
    samples = indicator_sweep(model, 0, 1, EAST, 0.0, [2.0, 4.0, 6.0, 8.0, 10.0], max_failure_fraction=0.2)
    assert [s.tau for s in samples] == [2.0, 6.0, 8.0, 10.0]
    with pytest.raises(ProbeError, match="1 of 4 samples failed"):
        indicator_sweep(model, 0, 1, EAST, 0.0, [2.0, 4.0, 6.0, 8.0], max_failure_fraction=0.2)


# ── Slope estimator ───────────────────────────────────────────────────────────


def test_slope_fit_recovers_support_and_power():
    samples = _synthetic(0.3, 1.0, np.arange(2.0, 21.0, 2.0))
    est = estimate_support_slope(samples, 0.0, model=FitModel.EXP_POWER, min_window=4, noise_floor=1e-10)
    assert est.method is EstimateMethod.SLOPE_FIT
    assert est.h_hat == pytest.approx(0.3, abs=1e-9)
    assert est.mu_hat == pytest.approx(1.0, abs=1e-8)
    assert est.r_squared == pytest.approx(1.0)
    assert est.window == (2.0, 20.0)
    assert est.direction == Direction.from_angle(0.0)


def test_slope_fit_exponential_model():
    samples = _synthetic(0.2, 0.0, [2.0, 4.0, 6.0, 8.0, 10.0])
    est = estimate_support_slope(samples, 0.0, model="exponential", min_window=4, noise_floor=1e-10)
    assert est.h_hat == pytest.approx(0.2, abs=1e-9)
    assert est.mu_hat == pytest.approx(0.0, abs=1e-8)


def test_slope_fit_is_independent_of_t():
    """ĥ = t + slope whatever level the samples are measured at."""
    taus = [2.0, 4.0, 6.0, 8.0, 10.0]
    at_zero = estimate_support_slope(_synthetic(0.2, 1.0, taus), 0.0, min_window=4, noise_floor=1e-10)
    at_half = estimate_support_slope(_synthetic(0.2, 1.0, taus, t=0.5), 0.5, min_window=4, noise_floor=1e-10)
    assert at_half.h_hat == pytest.approx(at_zero.h_hat, abs=1e-9)
    assert at_half.slope == pytest.approx(-0.3, abs=1e-9)


def test_slope_fit_skips_samples_below_floor():
    samples = _synthetic(0.2, 0.0, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])
    samples[0] = IndicatorSample(2.0, 0.0, 1e-14 + 0j)
    est = estimate_support_slope(samples, 0.0, model="exponential", min_window=4, noise_floor=1e-10)
    assert est.window == (4.0, 12.0)
    assert est.h_hat == pytest.approx(0.2, abs=1e-9)


def test_slope_fit_noise_floor():
    zeros = [IndicatorSample(tau, 0.0, 0j) for tau in (2.0, 4.0, 6.0, 8.0)]
    with pytest.raises(ProbeError, match="signal below noise floor"):
        estimate_support_slope(zeros, 0.0, min_window=3, noise_floor=1e-10)


def test_slope_fit_needs_enough_samples():
    with pytest.raises(ProbeError, match="At least 4 samples"):
        estimate_support_slope(_synthetic(0.2, 0.0, [2.0, 4.0]), 0.0, min_window=4)


def test_exp_power_fit_keeps_mu_non_negative():
    """τ^{+1} e^{0.2τ} has no decaying power: μ is held at 0 and the slope absorbs the growth."""
    samples = _synthetic(0.2, -1.0, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])
    est = estimate_support_slope(samples, 0.0, model=FitModel.EXP_POWER, min_window=4, noise_floor=1e-10)
    assert est.mu_fit == 0.0
    assert est.mu_hat == 0.0
    assert est.h_hat > 0.2


def test_exp_power_fit_windows_exceed_parameter_count():
    """min_window = 3 would leave no residual for three parameters."""
    taus = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]
    wobble = [1.0, 1.3, 0.8, 1.2, 0.9, 1.1]
    samples = [
        IndicatorSample(tau, 0.0, w * tau**-0.5 * math.exp(0.2 * tau) + 0j, 0.0)
        for tau, w in zip(taus, wobble, strict=True)
    ]
    est = estimate_support_slope(samples, 0.0, model=FitModel.EXP_POWER, min_window=3, noise_floor=1e-10)
    assert est.details["samples"] >= 4
    assert math.isfinite(est.r_squared)
    with pytest.raises(ProbeError, match="no 4 consecutive samples"):
        estimate_support_slope(samples[:3], 0.0, model=FitModel.EXP_POWER, min_window=3, noise_floor=1e-10)


def test_bisection_matches_slope_fit_on_its_window(monkeypatch):
    """Same window and μ: the two-point switch sits on the fitted support."""
    monkeypatch.setattr("enclosure_eit.core.probe.indicator", _fake_indicator(0.25, 1.5))
    samples = _synthetic(0.25, 1.5, [2.0, 4.0, 6.0, 8.0, 10.0])
    slope = estimate_support_slope(samples, 0.0, model=FitModel.EXP_POWER, min_window=4, noise_floor=1e-10)
    bisection = estimate_support_bisection(
        None,
        0,
        1,
        EAST,
        (-1.0, 1.0),
        slope.window,
        tol=1e-6,
        dead_band=0.01,
        mu=slope.mu_fit,
        noise_floor=1e-10,
    )
    assert bisection.window == slope.window
    assert bisection.mu_fit == pytest.approx(1.5, abs=1e-8)
    assert bisection.h_hat == pytest.approx(slope.h_hat, abs=1e-3)


# ── Growth classifier and bisection ──────────────────────────────────────────


def test_classify_growth():
    first, second = _synthetic(0.2, 0.0, [2.0, 16.0])
    assert classify_growth(first, second, 0.0, dead_band=0.1) is GrowthClass.GROWTH
    assert classify_growth(first, second, 0.4, dead_band=0.1) is GrowthClass.DECAY
    assert classify_growth(first, second, 0.2, dead_band=0.1) is GrowthClass.INDETERMINATE


def test_classify_growth_compensates_power():
    first, second = _synthetic(0.2, 1.0, [2.0, 16.0])
    assert classify_growth(first, second, 0.15, dead_band=0.1, mu=1.0) is GrowthClass.GROWTH
    assert classify_growth(first, second, 0.25, dead_band=0.1, mu=1.0) is GrowthClass.DECAY


def test_classify_growth_requires_ordered_pair():
    first, second = _synthetic(0.2, 0.0, [2.0, 16.0])
    with pytest.raises(ProbeError):
        classify_growth(second, first, 0.0)


def test_bisection_locates_switch(monkeypatch):
    monkeypatch.setattr("enclosure_eit.core.probe.indicator", _fake_indicator(0.2, 1.0))
    est = estimate_support_bisection(
        None, 0, 1, EAST, (0.0, 0.6), (2.0, 16.0), tol=1e-4, dead_band=0.1, mu=1.0, noise_floor=1e-10
    )
    assert est.method is EstimateMethod.BISECTION
    assert est.h_hat == pytest.approx(0.2, abs=0.01)
    lo, hi = est.details["indeterminate_band"]
    assert lo < 0.2 < hi


def test_bisection_without_bracket(monkeypatch):
    monkeypatch.setattr("enclosure_eit.core.probe.indicator", _fake_indicator(0.2, 0.0))
    with pytest.raises(ProbeError, match="no bracket"):
        estimate_support_bisection(None, 0, 1, EAST, (0.5, 0.9), (2.0, 16.0), tol=1e-3, noise_floor=1e-10)


def test_bisection_below_noise_floor(monkeypatch):
    def silent(model, P, Q, p, formulation=None):
        return IndicatorSample(p.tau, p.t, 0j)

    monkeypatch.setattr("enclosure_eit.core.probe.indicator", silent)
    with pytest.raises(ProbeError, match="signal below noise floor"):
        estimate_support_bisection(None, 0, 1, EAST, (0.0, 0.6), (2.0, 16.0), noise_floor=1e-10)


# ── Diamond phantom ───────────────────────────────────────────────────────────


@pytest.fixture(scope="module")
def fine_diamond(unit_disk, diamond_set):
    mesh = generate_mesh(unit_disk, diamond_set, 0.03)
    P = snap_boundary_point(mesh, (1.0, 0.0))
    Q = snap_boundary_point(mesh, (-1.0, 0.0))
    return ForwardModel(mesh, diamond_set), P, Q


@pytest.mark.slow
def test_diamond_support_estimates(fine_diamond):
    """ω = (1, 0), true h = 0.2: slope fit and bisection agree."""
    model, P, Q = fine_diamond
    with ThreadPoolExecutor(max_workers=4) as pool:
        samples = indicator_sweep(model, P, Q, EAST, 0.0, np.arange(2.0, 17.0, 2.0), pool)
    slope = estimate_support_slope(samples, 0.0, min_window=4)
    assert 0.15 <= slope.h_hat <= 0.25
    assert slope.r_squared >= 0.99
    bisection = estimate_support_bisection(model, P, Q, EAST, (-1.0, 1.0), slope.window, mu=slope.mu_fit)
    assert abs(bisection.h_hat - slope.h_hat) <= 0.05


@pytest.mark.slow
def test_diamond_growth_classification(fine_diamond):
    model, P, Q = fine_diamond
    first = indicator(model, P, Q, ProbeParams(EAST, 2.0, 0.0))
    second = indicator(model, P, Q, ProbeParams(EAST, 16.0, 0.0))
    samples = [indicator(model, P, Q, ProbeParams(EAST, tau, 0.0)) for tau in (2.0, 6.0, 10.0, 16.0)]
    mu = estimate_support_slope(samples, 0.0, min_window=3).mu_fit
    assert classify_growth(first, second, 0.0, mu=mu) is GrowthClass.GROWTH
    assert classify_growth(first, second, 0.4, mu=mu) is GrowthClass.DECAY
    direct = indicator(model, P, Q, ProbeParams(EAST, 16.0, 0.4))
    assert rescale_sample(second, 0.4).value == pytest.approx(direct.value, rel=1e-4)


@pytest.mark.slow
def test_diamond_indicator_decays_beyond_support(fine_diamond):
    """t = 0.5 > h = 0.2: |I| decreases in τ."""
    model, P, Q = fine_diamond
    samples = indicator_sweep(model, P, Q, EAST, 0.5, [4.0, 8.0, 12.0, 16.0])
    magnitudes = [s.magnitude for s in samples]
    assert magnitudes == sorted(magnitudes, reverse=True)


def _slope_and_bisection(model, P, Q, d, pool):
    samples = indicator_sweep(model, P, Q, d, 0.0, np.arange(2.0, 17.0, 2.0), pool)
    slope = estimate_support_slope(samples, 0.0, min_window=4, direction=d)
    bisection = estimate_support_bisection(model, P, Q, d, (-1.0, 1.0), slope.window, mu=slope.mu_fit)
    return slope, bisection


@pytest.mark.slow
def test_slope_and_bisection_agree_in_every_direction(diamond_set):
    mesh = generate_mesh(DomainSpec((0.0, 0.0), 1.0, 128), diamond_set, 0.05)
    P = snap_boundary_point(mesh, (1.0, 0.0))
    Q = snap_boundary_point(mesh, (-1.0, 0.0))
    model = ForwardModel(mesh, diamond_set)
    with ThreadPoolExecutor(max_workers=4) as pool:
        for k in range(8):
            d = Direction.from_angle(0.1 + k * math.pi / 4)
            slope, bisection = _slope_and_bisection(model, P, Q, d, pool)
            assert abs(slope.h_hat - bisection.h_hat) <= 0.05, d.angle
            assert abs(slope.h_hat - support_function(diamond_set, d)) <= 0.05, d.angle


@pytest.mark.slow
def test_support_estimate_is_rotation_equivariant(diamond_set):
    """Rotating the phantom, ω and both voltage points together leaves ĥ unchanged."""
    disk = DomainSpec((0.0, 0.0), 1.0, 96)
    turn = math.pi / 3
    estimates = []
    with ThreadPoolExecutor(max_workers=4) as pool:
        for incl, shift in ((diamond_set, 0.0), (diamond_set.rotated(turn), turn)):
            mesh = generate_mesh(disk, incl, 0.05)
            P = snap_boundary_point(mesh, disk.boundary_point(shift))
            Q = snap_boundary_point(mesh, disk.boundary_point(shift + math.pi))
            d = Direction.from_angle(0.1 + shift)
            slope, _ = _slope_and_bisection(ForwardModel(mesh, incl), P, Q, d, pool)
            estimates.append(slope.h_hat)
    assert abs(estimates[0] - estimates[1]) <= 0.02
