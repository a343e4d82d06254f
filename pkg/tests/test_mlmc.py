import math

import numpy as np
import pytest
from scipy.special import expit

from core.errors import ConfigError, GridAlignmentError
from core.models import LevelStats, merge_all
from core.problems import builtin_problem
from core.rng import level_streams
from core.scheme import grid_for_level, theta_em_path
from services import analysis
from services.mlmc_estimator import MlmcEstimator, estimate_level, mlmc_estimate


class RecordingHandler:
    def __init__(self):
        self.done = []
        self.allocations = []

    def on_level_done(self, stats):
        self.done.append(stats.level)

    def on_allocation(self, level, samples):
        self.allocations.append((level, samples))


# ---------- LevelStats ----------
def test_level_stats_from_samples(rng):
    deltas = rng.normal(3.0, 2.0, size=1000)
    stats = LevelStats.from_samples(4, deltas, deltas, 24.0)
    assert stats.mean_delta == pytest.approx(np.mean(deltas), rel=1e-14)
    assert stats.var_delta == pytest.approx(np.var(deltas, ddof=1), rel=1e-12)
    assert stats.cost_units == 24.0 * 1000
    assert stats.cost_per_sample == 24.0


def test_level_stats_merge_matches_concatenation(rng):
    parts = [rng.normal(1e6, 1.0, size=n) for n in (7, 300, 41)]
    merged = merge_all([LevelStats.from_samples(2, p, p * 2.0, 1.0) for p in parts])
    whole = np.concatenate(parts)
    assert merged.samples == whole.size
    assert merged.mean_delta == pytest.approx(whole.mean(), rel=1e-12)
    assert merged.var_delta == pytest.approx(np.var(whole, ddof=1), rel=1e-9)
    assert merged.var_fine == pytest.approx(np.var(2.0 * whole, ddof=1), rel=1e-9)


def test_level_stats_merge_rejects_other_level():
    with pytest.raises(ValueError):
        LevelStats.empty(2).merge(LevelStats.empty(3))


def test_level_stats_empty_is_neutral(rng):
    stats = LevelStats.from_samples(1, rng.normal(size=5), rng.normal(size=5), 1.0)
    assert LevelStats.empty(1).merge(stats) == stats
    assert stats.merge(LevelStats.empty(1)) == stats


# ---------- оценщик ----------
def test_cost_model(linear, sigmoid):
    estimator = MlmcEstimator(linear, sigmoid, M=2)
    assert estimator.cost_per_sample(4, base=True) == 16.0
    assert estimator.cost_per_sample(4, base=False) == 24.0


def test_zero_dynamics_exact(zero, sigmoid):
    estimate = mlmc_estimate(zero, sigmoid, 3, 5, 2, 0.5, None, 64, seed=1)
    assert estimate.value == pytest.approx(expit(1.0), abs=1e-12)
    assert estimate.std_error == pytest.approx(0.0, abs=1e-12)
    assert estimate.status == "ok"
    assert [s.level for s in estimate.levels] == [3, 4, 5]


def test_single_level_is_plain_monte_carlo(linear, sigmoid):
    estimate = mlmc_estimate(linear, sigmoid, 4, 4, 2, 0.25, None, 600, seed=5)
    grid = grid_for_level(linear, 4, 2, 0.25)
    paths = theta_em_path(linear, grid, level_streams(5, 4, 0, 600, 1, 2))
    values = sigmoid(paths.terminal())
    assert estimate.value == pytest.approx(float(np.mean(values)), rel=1e-10)
    assert estimate.std_error == pytest.approx(math.sqrt(np.var(values, ddof=1) / 600), rel=1e-9)


@pytest.mark.parametrize("coefs", [{}, {"eps": 1.0, "b1": 1.0}])
def test_shards_merge_to_full_run(sigmoid, coefs):
    problem = builtin_problem("linear_scalar", coefs)
    full = estimate_level(problem, sigmoid, 4, 2, 0.25, None, 512, seed=3)
    left = estimate_level(problem, sigmoid, 4, 2, 0.25, None, 300, seed=3)
    right = estimate_level(problem, sigmoid, 4, 2, 0.25, None, 212, seed=3, first_path=300)
    merged = left.merge(right)
    assert merged.samples == full.samples
    assert merged.mean_delta == pytest.approx(full.mean_delta, rel=1e-12)
    assert merged.var_delta == pytest.approx(full.var_delta, rel=1e-12)


def test_result_independent_of_jobs(linear, sigmoid):
    kwargs = dict(seed=11)
    one = mlmc_estimate(linear, sigmoid, 3, 5, 2, 0.25, None, 700, jobs=1, **kwargs)
    many = mlmc_estimate(linear, sigmoid, 3, 5, 2, 0.25, None, 700, jobs=3, **kwargs)
    assert one.value == many.value
    assert one.std_error == many.std_error
    assert one.levels == many.levels


def test_seed_changes_estimate(linear, sigmoid):
    a = mlmc_estimate(linear, sigmoid, 3, 4, 2, 0.25, None, 200, seed=1)
    b = mlmc_estimate(linear, sigmoid, 3, 4, 2, 0.25, None, 200, seed=2)
    assert a.value != b.value


def test_coupled_variance_far_below_fine_variance(sigmoid):
    problem = builtin_problem("linear_scalar", {"eps": 0.05})
    stats = estimate_level(problem, sigmoid, 3, 2, 0.25, None, 2000, seed=7)
    assert stats.var_delta / stats.var_fine < 0.1


def test_per_level_samples_and_handler(linear, sigmoid):
    handler = RecordingHandler()
    estimate = mlmc_estimate(linear, sigmoid, 3, 5, 2, 0.25, None, [400, 200, 100], 0, handler=handler)
    assert [s.samples for s in estimate.levels] == [400, 200, 100]
    assert handler.done == [3, 4, 5]
    assert estimate.total_cost == 400 * 8 + 200 * 24 + 100 * 48


def test_sample_list_length_checked(linear, sigmoid):
    with pytest.raises(ConfigError):
        mlmc_estimate(linear, sigmoid, 3, 5, 2, 0.25, None, [100, 100], 0)


def test_invalid_level_rejected_before_simulation(linear, sigmoid):
    handler = RecordingHandler()
    with pytest.raises(GridAlignmentError):
        mlmc_estimate(linear, sigmoid, 1, 4, 2, 0.25, None, 100, 0, handler=handler)
    assert handler.done == []


def test_tamed_mode_needs_base_level_two(cubic, sigmoid):
    with pytest.raises(ConfigError, match="base_level ≥ 2"):
        mlmc_estimate(cubic, sigmoid, 1, 4, 2, 0.5, 0.5, 100, 0)


def test_tamed_cubic_runs(cubic, sigmoid):
    estimate = mlmc_estimate(cubic, sigmoid, 3, 5, 2, 0.5, 0.5, 200, 0)
    assert np.isfinite(estimate.value)
    assert 0.0 < estimate.value < 1.0


def test_auto_allocation_meets_target(linear, sigmoid):
    handler = RecordingHandler()
    estimate = mlmc_estimate(
        linear, sigmoid, 3, 5, 2, 0.25, None, None, 2, target_se=2e-4, handler=handler
    )
    assert estimate.status == "ok"
    assert estimate.std_error <= 2e-4
    assert handler.allocations
    # на мелких уровнях нужно меньше выборок
    samples = [s.samples for s in estimate.levels]
    assert samples[0] > samples[-1]


def test_auto_allocation_reports_unmet_target(linear, sigmoid):
    estimate = mlmc_estimate(
        linear, sigmoid, 3, 5, 2, 0.25, None, None, 2, target_se=1e-7, max_samples=150
    )
    assert estimate.status == "target_not_met"
    assert estimate.std_error > 1e-7
    assert all(s.samples <= 150 for s in estimate.levels)


def test_samples_or_target_required(linear, sigmoid):
    with pytest.raises(ConfigError):
        mlmc_estimate(linear, sigmoid, 3, 5, 2, 0.25, None, None, 0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_agrees_with_fine_level_monte_carlo(linear, sigmoid, seed):
    estimate = mlmc_estimate(linear, sigmoid, 3, 6, 2, 0.25, None, 4000, seed)
    grid = grid_for_level(linear, 6, 2, 0.25)
    n = 100_000
    brute = analysis.path_statistics(linear, sigmoid, grid, None, 2, n, seed + 100, jobs=4)
    se = math.sqrt(estimate.std_error ** 2 + brute["var_psi"] / n)
    assert abs(estimate.value - brute["mean_psi"]) <= 3.0 * se
