"""
Связанная пара (мелкий h_l, грубый h_{l−1}) на общем шуме.

Узлы мелкой сетки t_n^k = n·h_{l−1} + k·h_l; за грубый интервал мелкий путь
делает M подшагов с ΔW = √h_l·ξ_n^k, грубый делает один шаг с ΔW = √h_l·Σ_k ξ_n^k.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, GridAlignmentError
from .models import Array, CoupledPair, GridSpec, LevelPair, Payoff, SddeProblem
from .rng import NoiseStream, aggregate_increments, stack_normals
from .scheme import (
    DelayBuffer,
    ThetaStepper,
    _aligned_count,
    check_admissible,
    check_taming,
    taming_for,
)


def make_level_pair(
    problem: SddeProblem, level: int, M: int, theta: float, delta: Optional[float] = None
) -> LevelPair:
    """Проверить согласованность сеток и допустимость шагов уровня l."""
    if M < 2:
        raise ConfigError(f"M={M}: коэффициент измельчения должен быть ≥ 2")
    if level < 1:
        raise ConfigError(f"связанная пара требует l ≥ 1, получено {level}")
    if delta is not None and level < 2:
        # грубый путь укрощается с h_{l−2}, при l = 1 такого шага нет
        raise ConfigError(f"укрощённая пара требует l ≥ 2, получено {level}")
    check_taming(problem, None if delta is None else taming_for(problem, 1.0, delta, M))
    h_fine = problem.horizon * float(M) ** (-level)
    h_coarse = M * h_fine
    m_fine = _aligned_count(problem.delay, h_fine, "τ")
    _aligned_count(problem.horizon, h_fine, "T")
    if m_fine % M:
        raise GridAlignmentError(
            f"m_l={m_fine} не делится на M={M}: "
            f"грубая сетка h_{{l−1}}={h_coarse} не согласована с τ"
        )
    check_admissible(problem, h_fine, theta)
    check_admissible(problem, h_coarse, theta)
    return LevelPair(
        M=M,
        level_l=level,
        h_fine=h_fine,
        h_coarse=h_coarse,
        m_fine=m_fine,
        theta=theta,
        delta=delta,
    )


def simulate_coupled_increments(problem: SddeProblem, pair: LevelPair, xi: Array) -> CoupledPair:
    """Пара по готовым ξ формы (пути, M^l, d)."""
    if xi.ndim != 3 or xi.shape[1:] != (pair.n_fine, problem.dim_noise):
        raise GridAlignmentError(
            f"ξ формы {xi.shape}, ожидается (P, {pair.n_fine}, {problem.dim_noise})"
        )
    n_paths = xi.shape[0]
    M = pair.M
    sqrt_h = math.sqrt(pair.h_fine)
    fine_dW = sqrt_h * xi
    coarse_dW = sqrt_h * aggregate_increments(xi, M)

    fine_grid = GridSpec(pair.h_fine, pair.m_fine, pair.n_fine, pair.theta, pair.level_l, M)
    coarse_grid = GridSpec(
        pair.h_coarse, pair.m_coarse, pair.n_coarse, pair.theta, pair.level_l - 1, M
    )
    fine_step = ThetaStepper(
        problem, pair.h_fine, pair.theta, taming_for(problem, pair.h_fine, pair.delta, M)
    )
    coarse_step = ThetaStepper(
        problem, pair.h_coarse, pair.theta, taming_for(problem, pair.h_coarse, pair.delta, M)
    )
    fine = DelayBuffer.from_initial(problem, fine_grid, n_paths)
    coarse = DelayBuffer.from_initial(problem, coarse_grid, n_paths)
    m_f, m_c = pair.m_fine, pair.m_coarse

    # один проход: M мелких подшагов, затем грубый шаг на их сумме
    for n in range(pair.n_coarse):
        for k in range(M):
            j = n * M + k
            x_f = fine_step.advance(
                fine.lookup(j), fine.lookup(j - m_f), fine.lookup(j + 1 - m_f), fine_dW[:, j]
            )
            fine.push(x_f)
        x_c = coarse_step.advance(
            coarse.lookup(n), coarse.lookup(n - m_c), coarse.lookup(n + 1 - m_c), coarse_dW[:, n]
        )
        coarse.push(x_c)

    fine_values = fine.values()
    return CoupledPair(
        fine_on_coarse_grid=fine_values[:, ::M],
        coarse=coarse.values(),
        fine=fine_values,
        pair=pair,
    )


def simulate_coupled(
    problem: SddeProblem, pair: LevelPair, noise: Union[NoiseStream, Sequence[NoiseStream]]
) -> CoupledPair:
    streams = [noise] if isinstance(noise, NoiseStream) else list(noise)
    for s in streams:
        if s.total_increments != pair.n_fine or s.substeps != pair.M:
            raise GridAlignmentError(
                f"поток шума ({s.n_steps}×{s.substeps}) не соответствует уровню "
                f"{pair.level_l} ({pair.n_coarse}×{pair.M})"
            )
    return simulate_coupled_increments(problem, pair, stack_normals(streams))


def coupled_payoff_delta(pair_result: CoupledPair, psi: Payoff) -> Array:
    """Ψ(fine(T)) − Ψ(coarse(T)) для каждого пути пакета."""
    return psi(pair_result.fine_on_coarse_grid[:, -1]) - psi(pair_result.coarse[:, -1])


def node_payoff_deltas(pair_result: CoupledPair, psi: Payoff) -> Array:
    """Ψ(fine(t_n)) − Ψ(coarse(t_n)) во всех грубых узлах, форма (пути, M^{l−1}+1)."""
    return psi(pair_result.fine_on_coarse_grid) - psi(pair_result.coarse)


def node_gap_squares(pair_result: CoupledPair) -> Array:
    """|fine(t_n) − coarse(t_n)|², форма (пути, M^{l−1}+1)."""
    diff = pair_result.fine_on_coarse_grid - pair_result.coarse
    return np.sum(diff * diff, axis=-1)
