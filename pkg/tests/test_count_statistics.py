import math

import numpy as np
import pytest

import constants
from config_manager import preset
from constants import Preset
from count_statistics import (DetectionParams, ErrorReport, PmfMethod, PreparedState, bright_label_prob,
                              count_distribution, distribution_table, error_report, first_order_bright_error,
                              fixed_time_mean_for_bright_prob, infidelity_curve, marginal_count_pmf,
                              normalization_cutoff, optimal_threshold, optimal_time, poisson_pmf,
                              r_from_eps_bright)
from errors import ConfigError, DomainError

PUBLISHED = constants.PUBLISHED


def test_poisson_pmf_matches_formula():
    mean = 9.23
    assert poisson_pmf(2, mean) == pytest.approx(mean ** 2 * math.exp(-mean) / 2.0)
    assert poisson_pmf(0, 0.0) == 1.0
    with pytest.raises(DomainError):
        poisson_pmf(1, -1.0)


def test_no_depump_reduces_to_poisson():
    params = DetectionParams(t_d=5e-4, r_bright=2e4, r_background=60.0)
    counts = np.arange(40)
    expected = poisson_pmf(counts, (2e4 + 60.0) * 5e-4)
    np.testing.assert_allclose(count_distribution(counts, params, PreparedState.BRIGHT), expected, rtol=1e-12)
    np.testing.assert_allclose(count_distribution(counts, params, PreparedState.DARK),
                               poisson_pmf(counts, 60.0 * 5e-4), rtol=1e-12)


@pytest.mark.parametrize("prepared", PreparedState.ALL)
def test_distribution_normalizes(prepared):
    params = DetectionParams(t_d=5e-4, r_bright=2e4, r_background=60.0, r_dep_bright=25.0, r_dep_dark=3.0)
    counts = np.arange(normalization_cutoff(params) + 1)
    assert np.sum(count_distribution(counts, params, prepared)) == pytest.approx(1.0, abs=1e-9)


def test_closed_form_agrees_with_quadrature():
    counts = np.arange(60)
    args = (2.006e4, 60.0, 40.0, 5e-4)
    closed = marginal_count_pmf(counts, *args, method=PmfMethod.CLOSED_FORM)
    quad = marginal_count_pmf(counts, *args, method=PmfMethod.QUADRATURE)
    mask = quad > 1e-12
    np.testing.assert_allclose(closed[mask], quad[mask], rtol=1e-7)


def test_closed_form_falls_back_when_rates_are_inverted():
    counts = np.arange(30)
    args = (60.0, 2.006e4, 3.0, 5e-4)
    np.testing.assert_allclose(marginal_count_pmf(counts, *args, method=PmfMethod.CLOSED_FORM),
                               marginal_count_pmf(counts, *args, method=PmfMethod.QUADRATURE), rtol=1e-9)


def test_equal_rates_give_plain_poisson():
    counts = np.arange(20)
    np.testing.assert_allclose(marginal_count_pmf(counts, 1e4, 1e4, 50.0, 1e-3),
                               poisson_pmf(counts, 10.0), rtol=1e-12)


def test_fast_depump_approaches_other_state():
    params = DetectionParams(t_d=5e-4, r_bright=2e4, r_background=60.0, r_dep_bright=1e8)
    counts = np.arange(10)
    np.testing.assert_allclose(count_distribution(counts, params, PreparedState.BRIGHT),
                               poisson_pmf(counts, 60.0 * 5e-4), atol=1e-3)


def test_scalar_and_array_inputs():
    params = DetectionParams(r_dep_bright=20.0)
    scalar = count_distribution(3, params, PreparedState.BRIGHT)
    assert isinstance(scalar, float)
    assert scalar == pytest.approx(count_distribution([3], params, PreparedState.BRIGHT)[0])


def test_invalid_inputs():
    with pytest.raises(DomainError):
        marginal_count_pmf(-1, 1e4, 0.0, 1.0, 1e-3)
    with pytest.raises(DomainError):
        marginal_count_pmf(1, 1e4, 0.0, -1.0, 1e-3)
    with pytest.raises(DomainError):
        marginal_count_pmf(1, 1e4, 0.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        count_distribution(1, DetectionParams(), "grey")


def test_detection_params_validation():
    with pytest.raises(ConfigError, match="detection.t_d"):
        DetectionParams(t_d=0.0)
    with pytest.raises(ConfigError, match="detection.threshold"):
        DetectionParams(threshold=0)
    with pytest.raises(ConfigError, match="detection.r_bright"):
        DetectionParams(r_bright=50.0, r_background=60.0)
    with pytest.raises(ConfigError, match="detection.ce"):
        DetectionParams(ce=1.5)
    with pytest.raises(ConfigError, match="detection.r_dep_dark"):
        DetectionParams(r_dep_dark=float("nan"))


def test_event_level_sampling_agrees():
    rate_p, rate_np, rate_dep, t_d = 2e4, 60.0, 25.0, 5e-4
    rng = np.random.default_rng(2024)
    n_samples = 1_000_000
    t_change = np.minimum(rng.exponential(1.0 / rate_dep, n_samples), t_d)
    counts = rng.poisson(rate_p * t_change + rate_np * (t_d - t_change))
    ns = np.arange(30)
    observed = np.bincount(counts, minlength=ns.size)[:ns.size]
    expected = n_samples * marginal_count_pmf(ns, rate_p, rate_np, rate_dep, t_d)
    mask = expected > 20
    z = (observed[mask] - expected[mask]) / np.sqrt(expected[mask])
    assert np.max(np.abs(z)) < 4.5


def test_first_order_bright_error():
    params = DetectionParams(t_d=1e-3, r_bright=1.96e4, r_background=0.0, r_dep_bright=1.96)
    ideal = params.with_(r_dep_bright=0.0)
    excess = (1 - bright_label_prob(params, PreparedState.BRIGHT)) - (1 - bright_label_prob(ideal, PreparedState.BRIGHT))
    assert excess == pytest.approx(first_order_bright_error(1e-4), rel=0.1)
    assert first_order_bright_error(1e-4) == pytest.approx(2e-4, rel=1e-3)


def test_r_from_eps_bright():
    assert r_from_eps_bright(PUBLISHED["bright_errors"] / PUBLISHED["shots_per_state"]) == pytest.approx(
        PUBLISHED["r_total"], rel=0.02)
    assert r_from_eps_bright(0.75) == pytest.approx(0.5)
    assert r_from_eps_bright(0.0) == 0.0
    assert first_order_bright_error(r_from_eps_bright(0.01, 3), 3) == pytest.approx(0.01)
    with pytest.raises(DomainError):
        r_from_eps_bright(1.0)


def test_error_report_from_counts():
    report = ErrorReport.from_errors(152e-5, 159e-5)
    assert report.infidelity == pytest.approx(0.001555)
    assert round(100 * report.fidelity, 2) == pytest.approx(99.84)
    assert report.to_dict()["eps_dark"] == pytest.approx(159e-5)
    with pytest.raises(DomainError):
        ErrorReport.from_errors(-0.1, 0.0)


def test_depump_free_optimum_time():
    params = DetectionParams(r_bright=1.96e4, r_background=60.0, threshold=2)
    result = optimal_time(params, (1e-4, 2e-3))
    a, b = 1.96e4 + 60.0, 60.0
    expected = 2.0 * math.log(a / b) / (a - b)
    assert result.t_opt == pytest.approx(expected, rel=0.02)
    assert result.t_opt == pytest.approx(PUBLISHED["optimal_time"], rel=0.02)
    assert not result.used_grid_fallback
    assert result.report.eps_bright < 0.1 * 152e-5
    assert result.report.infidelity < 0.5 * 0.001555


def test_optimal_time_without_background_is_at_upper_edge():
    params = DetectionParams(r_bright=1.96e4, r_background=0.0)
    result = optimal_time(params, (1e-4, 1e-3))
    assert result.t_opt == pytest.approx(1e-3, rel=1e-3)


def test_optimal_time_range_checks():
    with pytest.raises(DomainError):
        optimal_time(DetectionParams(), (1e-3, 1e-4))


def test_optimal_threshold():
    assert optimal_threshold(DetectionParams(r_background=0.0)) == 1
    assert optimal_threshold(DetectionParams(r_bright=2.5e4, r_background=60.0, r_dep_bright=19.0,
                                             r_dep_dark=2.975)) == 2
    assert optimal_threshold(DetectionParams(r_background=0.0), [3, 2]) == 2
    with pytest.raises(DomainError):
        optimal_threshold(DetectionParams(), [])
    with pytest.raises(DomainError):
        optimal_threshold(DetectionParams(), (0, 3))


def test_fixed_time_mean_for_bright_prob():
    mean = fixed_time_mean_for_bright_prob(0.999)
    assert mean == pytest.approx(PUBLISHED["bright_mean_for_999"], abs=0.01)
    assert 1 - poisson_pmf(0, mean) - poisson_pmf(1, mean) == pytest.approx(0.999, abs=1e-9)
    with pytest.raises(DomainError):
        fixed_time_mean_for_bright_prob(1.0)


def test_final_scenario_infidelity(final_config, low_depth_config):
    full = error_report(final_config.detection)
    low = error_report(low_depth_config.detection)
    assert 1.4e-3 <= full.infidelity <= 1.9e-3
    assert low.infidelity < full.infidelity


def test_distribution_table_rows():
    params = DetectionParams(r_dep_bright=20.0, r_dep_dark=3.0)
    assert len(distribution_table(params, n_max=15)) == 16
    rows = distribution_table(params)
    assert len(rows) == normalization_cutoff(params) + 1
    assert set(rows[0]) == {"n", "p_bright", "p_dark", "cdf_bright", "cdf_dark"}
    assert rows[-1]["cdf_bright"] == pytest.approx(1.0, abs=1e-9)
    assert rows[-1]["cdf_dark"] == pytest.approx(1.0, abs=1e-9)
    assert rows[1]["cdf_bright"] == pytest.approx(rows[0]["p_bright"] + rows[1]["p_bright"])


def test_infidelity_curve_tracks_error_report():
    params = DetectionParams(r_dep_bright=20.0)
    curve = infidelity_curve(params, [2e-4, 5e-4])
    assert [t for t, _ in curve] == [2e-4, 5e-4]
    assert curve[1][1] == error_report(params.with_(t_d=5e-4))
    assert curve[0][1].eps_bright > curve[1][1].eps_bright


@pytest.mark.slow
@pytest.mark.parametrize("name", [Preset.SIGMA, Preset.PI, Preset.FINAL])
def test_event_level_oracle_on_presets(name):
    params = preset(name).detection
    rng = np.random.default_rng(Preset.ALL.index(name))
    n_samples = 10_000_000
    for prepared in PreparedState.ALL:
        rate_p, rate_np, rate_dep = params.rates_for(prepared)
        t_change = np.minimum(rng.exponential(1.0 / rate_dep, n_samples), params.t_d)
        counts = rng.poisson(rate_p * t_change + rate_np * (params.t_d - t_change))
        ns = np.arange(normalization_cutoff(params) + 1)
        observed = np.bincount(counts, minlength=ns.size)[:ns.size]
        expected = n_samples * count_distribution(ns, params, prepared)
        mask = expected >= 10
        z = (observed[mask] - expected[mask]) / np.sqrt(expected[mask])
        assert np.max(np.abs(z)) < 4


def test_optimal_threshold_matches_brute_force(final_config):
    params = final_config.detection
    infidelities = {m: error_report(params.with_(threshold=m)).infidelity for m in range(1, 7)}
    assert optimal_threshold(params, (1, 6)) == min(infidelities, key=infidelities.get) == 2


def test_optimal_time_matches_dense_grid():
    params = DetectionParams(r_bright=1.96e4, r_background=60.0)
    grid = np.linspace(1e-4, 2e-3, 10_000)
    values = [error_report(params.with_(t_d=t)).infidelity for t in grid]
    t_grid = grid[int(np.argmin(values))]
    assert abs(optimal_time(params, (1e-4, 2e-3)).t_opt - t_grid) <= grid[1] - grid[0]


def test_bright_label_prob_ordering():
    base = DetectionParams(t_d=3e-4, r_background=60.0, r_dep_bright=100.0)
    by_rate = [bright_label_prob(base.with_(r_bright=r), PreparedState.BRIGHT) for r in (5e3, 1e4, 2e4, 4e4)]
    assert all(a <= b for a, b in zip(by_rate, by_rate[1:]))
    assert by_rate[0] < by_rate[-1]
    by_depump = [bright_label_prob(base.with_(r_dep_bright=r), PreparedState.BRIGHT) for r in (0.0, 10.0, 100.0, 1000.0)]
    assert all(a >= b for a, b in zip(by_depump, by_depump[1:]))
    assert by_depump[0] > by_depump[-1]
