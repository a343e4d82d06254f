import math

import numpy as np
import pytest

from core.coupling import (
    coupled_payoff_delta,
    make_level_pair,
    node_gap_squares,
    node_payoff_deltas,
    simulate_coupled,
    simulate_coupled_increments,
)
from core.errors import ConfigError, GridAlignmentError
from core.problems import builtin_payoff, builtin_problem
from core.rng import NoiseStream, aggregate_increments, level_streams, stack_normals
from core.scheme import grid_for_level, integrate_theta_em, taming_for


def test_level_pair_shape(linear):
    pair = make_level_pair(linear, 4, 2, 0.25)
    assert pair.h_fine == 1.0 / 16.0 and pair.h_coarse == 1.0 / 8.0
    assert pair.m_fine == 4 and pair.m_coarse == 2
    assert pair.n_fine == 16 and pair.n_coarse == 8


def test_level_pair_requires_divisible_delay_steps(linear):
    # l = 2: m_l = 1 не делится на M = 2
    with pytest.raises(GridAlignmentError, match="m_l"):
        make_level_pair(linear, 2, 2, 0.25)


def test_level_pair_rejects_bad_M_and_level(linear):
    with pytest.raises(ConfigError):
        make_level_pair(linear, 4, 1, 0.25)
    with pytest.raises(ConfigError):
        make_level_pair(linear, 0, 2, 0.25)


def test_tamed_pair_needs_level_two(cubic):
    problem = builtin_problem("cubic_onesided", {"tau": 1.0})
    with pytest.raises(ConfigError, match="l ≥ 2"):
        make_level_pair(problem, 1, 2, 0.5, 0.5)
    with pytest.raises(ConfigError, match="δ"):
        make_level_pair(cubic, 4, 2, 0.5, None)
    make_level_pair(cubic, 4, 2, 0.5, 0.5)


def test_additive_noise_without_drift_coarse_equals_fine():
    problem = builtin_problem("additive_noise", {"a1": 0.0, "a2": 0.0, "eps": 1.0})
    pair = make_level_pair(problem, 5, 2, 0.0)
    result = simulate_coupled(problem, pair, level_streams(4, 5, 0, 32, 1, 2))
    assert np.allclose(result.fine_on_coarse_grid, result.coarse, rtol=0.0, atol=1e-12)
    assert np.allclose(coupled_payoff_delta(result, builtin_payoff("identity")), 0.0, atol=1e-12)


def test_zero_dynamics_pair_is_exact(zero, sigmoid):
    pair = make_level_pair(zero, 4, 2, 0.5)
    result = simulate_coupled(zero, pair, level_streams(0, 4, 0, 8, 1, 2))
    assert np.array_equal(result.fine_on_coarse_grid, result.coarse)
    assert np.all(coupled_payoff_delta(result, sigmoid) == 0.0)
    assert np.all(node_gap_squares(result) == 0.0)


@pytest.mark.parametrize("name, delta", [("linear_scalar", None), ("cubic_onesided", 0.5)])
def test_both_paths_are_plain_theta_em_runs(name, delta):
    problem = builtin_problem(name)
    level, M, theta = 5, 2, 0.5
    pair = make_level_pair(problem, level, M, theta, delta)
    xi = stack_normals(level_streams(8, level, 0, 6, 1, M))
    result = simulate_coupled_increments(problem, pair, xi)

    fine_grid = grid_for_level(problem, level, M, theta)
    fine = integrate_theta_em(
        problem, fine_grid, math.sqrt(pair.h_fine) * xi, taming_for(problem, pair.h_fine, delta, M)
    )
    coarse_grid = grid_for_level(problem, level - 1, M, theta)
    coarse = integrate_theta_em(
        problem,
        coarse_grid,
        math.sqrt(pair.h_fine) * aggregate_increments(xi, M),
        taming_for(problem, pair.h_coarse, delta, M),
    )
    # мелкий путь уровня l и грубый путь уровня l+1 считаются одной рекурсией
    assert np.array_equal(result.fine, fine.values())
    assert np.array_equal(result.coarse, coarse.values())


def test_node_views(linear, sigmoid):
    pair = make_level_pair(linear, 4, 2, 0.25)
    result = simulate_coupled(linear, pair, level_streams(2, 4, 0, 5, 1, 2))
    assert result.n_paths == 5
    assert result.fine.shape == (5, 17, 1)
    assert result.coarse.shape == (5, 9, 1)
    deltas = node_payoff_deltas(result, sigmoid)
    assert deltas.shape == (5, 9)
    assert np.array_equal(deltas[:, -1], coupled_payoff_delta(result, sigmoid))
    assert np.all(deltas[:, 0] == 0.0)


def test_gap_shrinks_with_level(linear):
    gaps = []
    for level in (3, 4, 5):
        pair = make_level_pair(linear, level, 2, 0.25)
        result = simulate_coupled(linear, pair, level_streams(1, level, 0, 500, 1, 2))
        gaps.append(float(np.max(np.mean(node_gap_squares(result), axis=0))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_stream_layout_checked(linear):
    pair = make_level_pair(linear, 4, 2, 0.25)
    with pytest.raises(GridAlignmentError):
        simulate_coupled(linear, pair, NoiseStream(0, 4, 0, 1, 16, 1))
    with pytest.raises(GridAlignmentError):
        simulate_coupled_increments(linear, pair, np.zeros((3, 8, 1)))
