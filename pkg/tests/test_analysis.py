import numpy as np
import pytest

from core.errors import ConfigError, RateFitError
from core.problems import builtin_payoff, builtin_problem
from core.scheme import grid_for_level
from services import analysis

SIGMOID = builtin_payoff("sigmoid")


def _record_values(report, statistic):
    return [r.value for r in report.records if r.statistic == statistic]


# ---------- регрессия ----------
def test_fit_rate_exact_power_law():
    xs = [2.0 ** -k for k in range(3, 8)]
    fit = analysis.fit_rate(xs, [3.0 * x ** 2 for x in xs])
    assert fit.slope == pytest.approx(2.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.predict(0.5) == pytest.approx(0.75)
    assert len(fit.points) == 5


def test_fit_rate_needs_three_positive_points():
    with pytest.raises(RateFitError, match="≥ 3"):
        analysis.fit_rate([1.0, 2.0], [1.0, 4.0])
    with pytest.raises(RateFitError):
        analysis.fit_rate([1.0, 2.0, 3.0], [1.0, 0.0, 9.0])
    with pytest.raises(RateFitError):
        analysis.fit_rate([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_fit_envelope_recovers_constants():
    hs = np.array([2.0 ** -k for k in range(3, 9)])
    ys = 2.0 * hs ** 2 + 0.5 * hs
    fit = analysis.fit_envelope(hs[:, None], ys, [[2.0], [1.0]])
    assert fit.constants == pytest.approx((2.0, 0.5), rel=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.cover == pytest.approx(1.0, rel=1e-6)


def test_fit_envelope_two_variables():
    points = [(h, e) for h in (0.125, 0.0625, 0.03125) for e in (0.1, 0.3, 1.0)]
    ys = [h ** 2 + 3.0 * e ** 4 * h for h, e in points]
    fit = analysis.fit_envelope(points, ys, [[2.0, 0.0], [1.0, 4.0]])
    assert fit.constants == pytest.approx((1.0, 3.0), rel=1e-6)


def test_fit_envelope_rejects_mismatch():
    with pytest.raises(RateFitError):
        analysis.fit_envelope([[1.0], [2.0], [3.0]], [1.0, 2.0], [[1.0]])
    with pytest.raises(RateFitError):
        analysis.fit_envelope([[1.0], [2.0], [3.0]], [1.0, -2.0, 3.0], [[1.0]])


# ---------- скелет ----------
def test_skeleton_implicit_closed_form(linear):
    grid = grid_for_level(linear, 3, 2, 1.0)
    z = analysis.deterministic_skeleton(linear, grid).values()[0, :, 0]
    a1, a2 = linear.coefficients["a1"], linear.coefficients["a2"]
    h, m = grid.step_h, grid.steps_per_delay_m
    hist = [1.0] * (m + 1)
    for _ in range(grid.total_steps_N):
        hist.append((hist[-1] + h * a2 * hist[-m]) / (1.0 - h * a1))
    assert z == pytest.approx(np.array(hist[m:]), rel=1e-10)


def test_skeleton_of_one_sided_problem_needs_taming(cubic):
    grid = grid_for_level(cubic, 3, 2, 0.5)
    with pytest.raises(ConfigError):
        analysis.deterministic_skeleton(cubic, grid)
    z = analysis.deterministic_skeleton(cubic, grid, require_taming=False).values()
    assert np.all(np.isfinite(z))


# ---------- малый шум ----------
def test_deviation_vanishes_without_noise(linear):
    assert analysis.deviation_moment(linear, 4, 2, 0.25, None, 0.0, 8, seed=1) == 0.0


def test_deviation_scales_like_eps_squared(linear):
    report = analysis.small_noise_deviation(linear, 4, 0.25, None, [0.01, 0.03, 0.1], 1000, seed=2)
    assert report.eps_slope.slope == pytest.approx(2.0, abs=0.3)
    assert report.h_slope is None
    assert len(_record_values(report, "sup_sq_deviation")) == 3
    assert _record_values(report, "sup_sq_deviation.slope_eps") == [report.eps_slope.slope]


def test_tamed_deviation_vanishes_without_noise(cubic):
    assert analysis.deviation_moment(cubic, 5, 2, 0.5, 0.5, 0.0, 16, seed=3) == 0.0


def test_tamed_deviation_scales_like_eps_squared(cubic):
    eps_sweep = [1e-3, 1e-2, 1e-1]
    report = analysis.small_noise_deviation(cubic, 5, 0.5, 0.5, eps_sweep, 500, seed=3)
    assert report.eps_slope.slope == pytest.approx(2.0, abs=0.3)
    values = _record_values(report, "sup_sq_deviation")
    envelope = analysis.fit_envelope([[e] for e in eps_sweep], values, [[0.0], [2.0]])
    floor, noise = envelope.constants
    assert floor >= 0.0
    assert noise > 0.0
    assert envelope.cover <= 2.0


def test_deviation_sweep_validation(linear):
    with pytest.raises(RateFitError):
        analysis.small_noise_deviation(linear, 4, 0.25, None, [0.0, 0.01, 0.1], 10, seed=0)
    with pytest.raises(ConfigError, match="декаду"):
        analysis.small_noise_deviation(linear, 4, 0.25, None, [0.02, 0.05, 0.1], 10, seed=0)


def test_too_few_paths_rejected(linear):
    with pytest.raises(ConfigError):
        analysis.deviation_moment(linear, 4, 2, 0.25, None, 0.1, 1, seed=0)


def test_jobs_do_not_change_statistics(linear):
    grid = grid_for_level(linear, 4, 2, 0.25)
    one = analysis.path_statistics(linear, SIGMOID, grid, None, 2, 700, 4, jobs=1)
    many = analysis.path_statistics(linear, SIGMOID, grid, None, 2, 700, 4, jobs=3)
    assert one == many
    assert set(one) == {"mean_terminal", "var_terminal", "mean_psi", "var_psi", "sup_sq_moment"}


# ---------- пары ----------
def test_coupled_gap_moments_order(linear):
    sup, term = analysis.coupled_gap_moments(linear, 4, 2, 0.25, None, 0.1, 200, seed=0)
    assert sup >= term > 0.0


def test_coupling_reduces_variance(linear):
    coupled, _ = analysis.payoff_delta_variances(linear, SIGMOID, 4, 2, 0.25, None, 0.1, 500, 1)
    independent, _ = analysis.payoff_delta_variances(
        linear, SIGMOID, 4, 2, 0.25, None, 0.1, 500, 1, coupled=False
    )
    assert coupled < 0.1 * independent


def test_repeated_levels_rejected(linear):
    with pytest.raises(ConfigError):
        analysis.coupled_moment_rates(linear, 0.25, None, [3, 4, 4], [], 10, 0)


def test_strong_rate_needs_three_levels(linear):
    with pytest.raises(RateFitError):
        analysis.strong_error_rate(linear, SIGMOID, 0.25, [3, 4], 0.1, 10, 0)


# ---------- приращения, смещение, моменты ----------
def test_deterministic_increments_scale_like_h_squared(linear):
    report = analysis.increment_moment_rate(linear, 0.25, [3, 4, 5, 6], 0.0, 2, seed=0)
    assert report.h_slope.slope == pytest.approx(2.0, abs=0.2)


def test_noisy_increments_scale_like_h():
    problem = builtin_problem("additive_noise", {"eps": 1.0})
    report = analysis.increment_moment_rate(problem, 0.25, [3, 4, 5, 6], 1.0, 2000, seed=1)
    assert report.h_slope.slope == pytest.approx(1.0, abs=0.2)
    within = analysis.increment_moment_rate(
        problem, 0.25, [3, 4, 5, 6], 1.0, 2000, seed=1, within_interval=True
    )
    assert within.h_slope.slope == pytest.approx(1.0, abs=0.2)
    assert _record_values(within, "interval_increment_sq")


def test_interval_bias_first_order(linear):
    report = analysis.interval_bias_rate(linear, 0.25, [3, 4, 5, 6], 0.1, 4000, seed=2)
    assert report.h_slope.slope == pytest.approx(1.0, abs=0.3)


def test_untamed_explicit_scheme_explodes_tamed_does_not():
    problem = builtin_problem("cubic_onesided", {"x0": 5.0})
    wild = analysis.moment_bound_profile(
        problem, 0.0, [3], 0.1, 64, seed=0, require_taming=False
    )
    tamed = analysis.moment_bound_profile(problem, 0.0, [3], 0.1, 64, seed=0, delta=0.25)
    assert _record_values(wild, "frac_above_threshold")[0] > 0.0
    assert _record_values(tamed, "frac_above_threshold")[0] == 0.0
    assert _record_values(tamed, "max_sup_abs")[0] < 1e3


@pytest.mark.parametrize(
    "name, delta",
    [
        ("linear_scalar", None),
        ("additive_noise", None),
        ("zero_dynamics", None),
        ("cubic_onesided", 0.25),
    ],
)
def test_moments_stay_bounded_as_step_shrinks(name, delta):
    problem = builtin_problem(name)
    report = analysis.moment_bound_profile(
        problem, 0.5, [3, 4, 5, 6, 7], 0.5, 300, seed=4, delta=delta
    )
    moments = _record_values(report, "sup_sq_moment")
    assert len(moments) == 5
    assert all(np.isfinite(moments))
    # без роста по уровням
    assert max(moments) <= 1.5 * min(moments)
    assert all(f == 0.0 for f in _record_values(report, "frac_above_threshold"))


# ---------- скорости сходимости (длинные прогоны) ----------
@pytest.mark.slow
def test_strong_error_small_noise_second_order(linear):
    report = analysis.strong_error_rate(linear, SIGMOID, 0.25, [3, 4, 5, 6, 7], 1e-4, 1000, 0, jobs=4)
    assert report.h_slope.slope == pytest.approx(2.0, abs=0.3)


@pytest.mark.slow
def test_strong_error_unit_noise_first_order():
    # мультипликативный шум: порядок сильной сходимости 1/2
    problem = builtin_problem("linear_scalar", {"b1": 1.0, "eps": 1.0})
    report = analysis.strong_error_rate(problem, SIGMOID, 0.25, [3, 4, 5, 6, 7], 1.0, 4000, 0, jobs=4)
    assert report.h_slope.slope == pytest.approx(1.0, abs=0.3)


@pytest.mark.slow
def test_coupled_moment_second_order_in_h(linear):
    report = analysis.coupled_moment_rates(
        linear, 0.25, None, [3, 4, 5, 6, 7], [], 500, 0, eps_for_h=1e-4, jobs=4
    )
    assert report.h_slope.slope == pytest.approx(2.0, abs=0.3)
    assert report.eps_slope is None


@pytest.mark.slow
def test_coupled_moment_fourth_order_in_eps():
    # без сноса разность пары создаётся только шумом: ε⁴h
    problem = builtin_problem("linear_scalar", {"a1": 0.0, "a2": 0.0, "b1": 1.0, "b2": 0.0})
    report = analysis.coupled_moment_rates(
        problem, 0.25, None, [], [0.025, 0.05, 0.1, 0.2], 8000, 0, level_for_eps=6, jobs=4
    )
    assert report.eps_slope.slope == pytest.approx(4.0, abs=0.4)


@pytest.mark.slow
def test_coupled_variance_rates():
    linear = builtin_problem("linear_scalar")
    by_h = analysis.coupled_variance_rates(
        linear, SIGMOID, 0.25, [3, 4, 5, 6, 7], [], 2000, 0, eps_for_h=1e-5, jobs=4
    )
    # при малом ε детерминированная часть разности не даёт дисперсии: видна ε²h²
    assert by_h.h_slope.slope == pytest.approx(2.0, abs=0.4)
    coupled = _record_values(by_h, "var_delta")
    independent = _record_values(by_h, "var_uncoupled")
    assert all(c < u for c, u in zip(coupled, independent))

    driftless = builtin_problem("linear_scalar", {"a1": 0.0, "a2": 0.0, "b1": 1.0, "b2": 0.0})
    by_eps = analysis.coupled_variance_rates(
        driftless, SIGMOID, 0.25, [], [0.025, 0.05, 0.1, 0.2], 8000, 0,
        level_for_eps=6, uncoupled=False, jobs=4,
    )
    assert by_eps.eps_slope.slope == pytest.approx(4.0, abs=0.4)


@pytest.mark.slow
def test_tamed_coupled_moment_envelope(cubic):
    delta, eps = 0.25, 1e-4
    levels = [3, 4, 5, 6, 7]
    report = analysis.coupled_moment_rates(
        cubic, 0.5, delta, levels, [], 500, 0, eps_for_h=eps, jobs=4
    )
    hs = [cubic.horizon * 2.0 ** -level for level in levels]
    sups = [
        r.value for r in report.records
        if r.statistic == "sup_gap_sq" and r.eps == eps
    ]
    envelope = analysis.fit_envelope(
        [[h, eps] for h in hs], sups, [[2.0 * delta, 0.0], [2.0, 0.0], [1.0, 2.0]]
    )
    assert envelope.constants[0] > 0.0
    assert envelope.cover <= 2.0
    assert envelope.r_squared >= 0.85


@pytest.mark.slow
def test_tamed_coupled_variance_envelope(cubic):
    delta, eps = 0.25, 0.5
    levels = [3, 4, 5, 6, 7]
    report = analysis.coupled_variance_rates(
        cubic, SIGMOID, 0.5, levels, [], 2000, 0,
        delta=delta, eps_for_h=eps, uncoupled=False, jobs=4,
    )
    hs = [cubic.horizon * 2.0 ** -level for level in levels]
    variances = _record_values(report, "var_delta")
    assert len(variances) == len(levels)
    assert variances[-1] < variances[0]
    envelope = analysis.fit_envelope(
        [[h, eps] for h in hs], variances, [[2.0 * delta, 0.0], [1.0, 2.0]]
    )
    assert sum(envelope.constants) > 0.0
    assert envelope.cover <= 2.0
    assert envelope.r_squared >= 0.85
