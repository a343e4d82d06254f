"""
Детерминированный скелет, регрессия скоростей и эмпирические проверки оценок.

Каждая ячейка свипа (уровень, ε) берёт шум из собственной «полосы» потоков:
полоса 0 отдана свипу по h, полоса 2 + 2i отдана i-му значению ε, соседняя нечётная даёт
независимый грубый путь для несвязанного сравнения.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls
from scipy.stats import linregress

from core.config import cfg
from core.coupling import make_level_pair, node_gap_squares, simulate_coupled_increments
from core.errors import ConfigError, NonConvergence, RateFitError
from core.models import (
    Array,
    CoupledPair,
    EnvelopeFit,
    GridSpec,
    LevelPair,
    Payoff,
    RateFit,
    RateReport,
    ResultRecord,
    SddeProblem,
)
from core.rng import NoiseStream, aggregate_increments, level_streams, stack_normals
from core.scheme import DelayBuffer, TamedDrift, grid_for_level, integrate_theta_em, taming_for
from core.utils import Logger, chunk_ranges
from services.path_pool_manager import PathPoolManager

logger = Logger("Analysis")


# ---------- регрессия ----------
def fit_rate(xs: Sequence[float], ys: Sequence[float]) -> RateFit:
    """МНК по точкам (log x, log y); нужно ≥ 3 точек с x, y > 0."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise RateFitError(f"несогласованные формы точек: {x.shape} и {y.shape}")
    if x.size < 3:
        raise RateFitError(f"регрессия требует ≥ 3 точек, получено {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise RateFitError("точки регрессии содержат inf/nan")
    if np.any(x <= 0) or np.any(y <= 0):
        raise RateFitError("логарифмическая регрессия требует x > 0 и y > 0")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0.0:
        raise RateFitError("все значения x совпадают")
    res = linregress(lx, ly)
    r2 = float(res.rvalue) ** 2 if np.isfinite(res.rvalue) else 0.0
    return RateFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r_squared=min(max(r2, 0.0), 1.0),
        points=tuple(zip(lx.tolist(), ly.tolist())),
    )


def fit_envelope(
    xs: Sequence[Sequence[float]], ys: Sequence[float], exponents: Sequence[Sequence[float]]
) -> EnvelopeFit:
    """
    y ≈ Σ_j C_j·Π_i x_i^{e_ij}, C_j ≥ 0, в относительной норме (строки делятся на y).

    xs: (точки, переменные), например столбцы (h, ε); exponents: (слагаемые, переменные).
    """
    X = np.asarray(xs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(ys, dtype=float)
    E = np.atleast_2d(np.asarray(exponents, dtype=float))
    if X.shape[0] != y.size or E.shape[1] != X.shape[1]:
        raise RateFitError(
            f"огибающая: точки {X.shape}, значения {y.shape}, показатели {E.shape} не согласованы"
        )
    if y.size < max(3, E.shape[0]):
        raise RateFitError(f"огибающая из {E.shape[0]} слагаемых по {y.size} точкам")
    if np.any(X <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise RateFitError("огибающая требует положительных конечных точек")

    basis = np.prod(X[:, None, :] ** E[None, :, :], axis=-1)
    constants, _ = nnls(basis / y[:, None], np.ones_like(y))
    pred = basis @ constants
    if np.all(pred > 0):
        ly = np.log(y)
        ss_res = float(np.sum((ly - np.log(pred)) ** 2))
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float(ss_res == 0.0)
        cover = float(np.max(y / pred))
    else:
        r2, cover = 0.0, math.inf
    return EnvelopeFit(
        exponents=tuple(tuple(row) for row in E.tolist()),
        constants=tuple(float(c) for c in constants),
        r_squared=min(max(r2, 0.0), 1.0),
        cover=cover,
    )


# ---------- скелет ----------
def deterministic_skeleton(
    problem: SddeProblem,
    grid: GridSpec,
    taming: Optional[TamedDrift] = None,
    *,
    require_taming: bool = True,
) -> DelayBuffer:
    """Та же рекурсия без шумового слагаемого: Z_h."""
    return integrate_theta_em(problem, grid, None, taming, require_taming=require_taming)


# ---------- общие помощники ----------
def _lane(eps_index: Optional[int] = None, uncoupled: bool = False) -> int:
    base = 0 if eps_index is None else 2 + 2 * eps_index
    return base + int(uncoupled)


def _map_chunks(n_paths: int, jobs: int, fn: Callable[[int, int], Array]) -> List[Array]:
    if n_paths < 2:
        raise ConfigError(f"n_paths={n_paths}: нужно минимум 2 пути")
    pool = PathPoolManager(max_threads=jobs)
    return pool.map(lambda chunk: fn(*chunk), list(chunk_ranges(n_paths, cfg.chunk_size)))


def _located(level: int, first: int, run: Callable[[], object]):
    try:
        return run()
    except NonConvergence as e:
        located = e.locate(level, first)
        logger.error(str(located))
        raise located from e


def level_paths(
    problem: SddeProblem,
    level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    first: int,
    count: int,
    seed: int,
    lane: int = 0,
    *,
    require_taming: bool = True,
) -> DelayBuffer:
    """Пакет путей одного уровня из потоков (seed, level, first…first+count−1, lane)."""
    grid = grid_for_level(problem, level, M, theta)
    xi = stack_normals(level_streams(seed, level, first, count, problem.dim_noise, M, lane))
    taming = taming_for(problem, grid.step_h, delta, M)
    return _located(
        level,
        first,
        lambda: integrate_theta_em(
            problem, grid, math.sqrt(grid.step_h) * xi, taming, require_taming=require_taming
        ),
    )


def grid_paths(
    problem: SddeProblem,
    grid: GridSpec,
    delta: Optional[float],
    M: int,
    first: int,
    count: int,
    seed: int,
    lane: int = 0,
) -> DelayBuffer:
    """
    Пакет путей на произвольной согласованной сетке; ключ потока: (seed, grid.level или 0).
    Для сетки уровня l нормали совпадают с level_paths: адрес слова тот же.
    """
    level = grid.level or 0
    streams = [
        NoiseStream(seed, level, first + i, problem.dim_noise, grid.total_steps_N, 1, lane)
        for i in range(count)
    ]
    xi = stack_normals(streams)
    taming = taming_for(problem, grid.step_h, delta, M)
    return _located(
        level, first, lambda: integrate_theta_em(problem, grid, math.sqrt(grid.step_h) * xi, taming)
    )


def path_statistics(
    problem: SddeProblem,
    psi: Payoff,
    grid: GridSpec,
    delta: Optional[float],
    M: int,
    n_paths: int,
    seed: int,
    *,
    jobs: int = 1,
) -> Dict[str, float]:
    """Моменты X(T), Ψ(X(T)) и sup_n |X|² по пакету путей одной сетки."""

    def cell(first: int, count: int) -> Array:
        x = grid_paths(problem, grid, delta, M, first, count, seed).values()
        sup_sq = np.max(np.sum(x * x, axis=-1), axis=1)
        return np.column_stack([x[:, -1, 0], psi(x[:, -1]), sup_sq])

    rows = np.concatenate(_map_chunks(n_paths, jobs, cell))
    return {
        "mean_terminal": float(np.mean(rows[:, 0])),
        "var_terminal": float(np.var(rows[:, 0], ddof=1)),
        "mean_psi": float(np.mean(rows[:, 1])),
        "var_psi": float(np.var(rows[:, 1], ddof=1)),
        "sup_sq_moment": float(np.mean(rows[:, 2])),
    }


def coupled_paths(
    problem: SddeProblem, pair: LevelPair, first: int, count: int, seed: int, lane: int = 0
) -> CoupledPair:
    xi = stack_normals(
        level_streams(seed, pair.level_l, first, count, problem.dim_noise, pair.M, lane)
    )
    return _located(pair.level_l, first, lambda: simulate_coupled_increments(problem, pair, xi))


def _record(
    experiment: str,
    statistic: str,
    value: float,
    *,
    level: Optional[int] = None,
    h: Optional[float] = None,
    eps: Optional[float] = None,
    theta: Optional[float] = None,
    delta: Optional[float] = None,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
) -> ResultRecord:
    return ResultRecord(
        experiment=experiment,
        statistic=statistic,
        value=float(value),
        level=level,
        h=h,
        eps=eps,
        theta=theta,
        delta=delta,
        samples=samples,
        seed=seed,
    )


def _fit_records(
    experiment: str, statistic: str, axis: str, fit: RateFit, theta: float, delta, seed: int
) -> List[ResultRecord]:
    common = dict(theta=theta, delta=delta, seed=seed)
    return [
        _record(experiment, f"{statistic}.slope_{axis}", fit.slope, **common),
        _record(experiment, f"{statistic}.r2_{axis}", fit.r_squared, **common),
    ]


def _positive_points(xs: Sequence[float], ys: Sequence[float]) -> Tuple[List[float], List[float]]:
    keep = [(x, y) for x, y in zip(xs, ys) if x > 0 and y > 0 and math.isfinite(y)]
    return [x for x, _ in keep], [y for _, y in keep]


def _check_levels(level_sweep: Sequence[int]) -> List[int]:
    levels = sorted(set(int(l) for l in level_sweep))
    if len(levels) != len(level_sweep):
        raise ConfigError(f"повторяющиеся уровни в свипе: {list(level_sweep)}")
    return levels


# ---------- малый шум ----------
def deviation_moment(
    problem: SddeProblem,
    level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    lane: int = 0,
    jobs: int = 1,
) -> float:
    """
    E[sup_n |X^ε(t_n) − Z(t_n)|²]; Z обозначает скелет на той же сетке с тем же укрощением сноса.
    """
    p = problem.with_noise_scale(eps)
    grid = grid_for_level(p, level, M, theta)
    taming = taming_for(p, grid.step_h, delta, M)
    z = deterministic_skeleton(p, grid, taming, require_taming=False).values()

    def cell(first: int, count: int) -> Array:
        x = level_paths(p, level, M, theta, delta, first, count, seed, lane).values()
        d = x - z
        return np.max(np.sum(d * d, axis=-1), axis=1)

    return float(np.mean(np.concatenate(_map_chunks(n_paths, jobs, cell))))


def small_noise_deviation(
    problem: SddeProblem,
    level: int,
    theta: float,
    delta: Optional[float],
    eps_sweep: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    M: int = 2,
    jobs: int = 1,
) -> RateReport:
    """Наклон log E sup|X^ε − Z|² по log ε; ожидается 2."""
    positive = [e for e in eps_sweep if e > 0]
    if len(positive) < 3:
        raise RateFitError(
            f"свип по ε требует ≥ 3 положительных значений, получено {len(positive)}"
        )
    if max(positive) < 10.0 * min(positive):
        raise ConfigError(f"свип по ε {list(eps_sweep)} должен покрывать хотя бы декаду")
    h = grid_for_level(problem, level, M, theta).step_h
    records = []
    values = []
    for i, eps in enumerate(eps_sweep):
        value = deviation_moment(
            problem, level, M, theta, delta, eps, n_paths, seed, lane=_lane(i), jobs=jobs
        )
        values.append(value)
        records.append(_record(
            "deviation", "sup_sq_deviation", value, level=level, h=h, eps=eps,
            theta=theta, delta=delta, samples=n_paths, seed=seed,
        ))
        logger.info(f"Отклонение от скелета: ε={eps:.3g}, E sup|X−Z|² = {value:.4e}")
    xs, ys = _positive_points(eps_sweep, values)
    fit = fit_rate(xs, ys)
    records.extend(_fit_records("deviation", "sup_sq_deviation", "eps", fit, theta, delta, seed))
    return RateReport(h_slope=None, eps_slope=fit, records=records)


# ---------- связанные пары ----------
def coupled_gap_moments(
    problem: SddeProblem,
    level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    lane: int = 0,
    jobs: int = 1,
) -> Tuple[float, float]:
    """(sup_n E|fine(t_n) − coarse(t_n)|², E|fine(T) − coarse(T)|²)."""
    p = problem.with_noise_scale(eps)
    pair = make_level_pair(p, level, M, theta, delta)

    def cell(first: int, count: int) -> Array:
        return np.sum(node_gap_squares(coupled_paths(p, pair, first, count, seed, lane)), axis=0)

    per_node = np.sum(_map_chunks(n_paths, jobs, cell), axis=0) / n_paths
    return float(np.max(per_node)), float(per_node[-1])


def payoff_delta_variances(
    problem: SddeProblem,
    psi: Payoff,
    level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    lane: int = 0,
    coupled: bool = True,
    jobs: int = 1,
) -> Tuple[float, float]:
    """
    (Var(Ψ(fine(T)) − Ψ(coarse(T))), sup_n Var(Ψ(fine(t_n)) − Ψ(coarse(t_n)))).
    coupled=False: грубый путь берётся из соседней независимой полосы.
    """
    p = problem.with_noise_scale(eps)
    pair = make_level_pair(p, level, M, theta, delta)

    def cell(first: int, count: int) -> Array:
        fine = coupled_paths(p, pair, first, count, seed, lane)
        coarse = fine if coupled else coupled_paths(p, pair, first, count, seed, lane + 1)
        return psi(fine.fine_on_coarse_grid) - psi(coarse.coarse)

    deltas = np.concatenate(_map_chunks(n_paths, jobs, cell), axis=0)
    per_node = np.var(deltas, axis=0, ddof=1)
    return float(per_node[-1]), float(np.max(per_node))


def _sweep_setup(
    problem: SddeProblem,
    level_sweep: Sequence[int],
    eps_sweep: Sequence[float],
    eps_for_h: Optional[float],
    level_for_eps: Optional[int],
) -> Tuple[List[int], float, Optional[int]]:
    levels = _check_levels(level_sweep)
    h_eps = problem.noise_scale if eps_for_h is None else eps_for_h
    eps_level = level_for_eps
    if eps_sweep and eps_level is None:
        if not levels:
            raise ConfigError("для свипа по ε нужен level_for_eps или непустой свип уровней")
        eps_level = levels[-1]
    return levels, h_eps, eps_level


def coupled_moment_rates(
    problem: SddeProblem,
    theta: float,
    delta: Optional[float],
    level_sweep: Sequence[int],
    eps_sweep: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    M: int = 2,
    eps_for_h: Optional[float] = None,
    level_for_eps: Optional[int] = None,
    jobs: int = 1,
) -> RateReport:
    """
    Наклоны sup_n E|fine − coarse|² по h_l (при ε = eps_for_h)
    и по ε (на уровне level_for_eps). Терминальный момент пишется рядом.
    """
    levels, h_eps, eps_level = _sweep_setup(
        problem, level_sweep, eps_sweep, eps_for_h, level_for_eps
    )
    records: List[ResultRecord] = []
    h_fit = eps_fit = None
    common = dict(theta=theta, delta=delta, samples=n_paths, seed=seed)

    def cell(level: int, eps: float, lane: int) -> float:
        h = problem.horizon * float(M) ** (-level)
        sup, term = coupled_gap_moments(
            problem, level, M, theta, delta, eps, n_paths, seed, lane=lane, jobs=jobs
        )
        where = dict(level=level, h=h, eps=eps, **common)
        records.append(_record("rates-moment", "sup_gap_sq", sup, **where))
        records.append(_record("rates-moment", "terminal_gap_sq", term, **where))
        logger.info(f"Момент пары: l={level}, ε={eps:.3g}, sup E|Δ|² = {sup:.4e}")
        return sup

    if levels:
        hs = [problem.horizon * float(M) ** (-level) for level in levels]
        h_fit = fit_rate(hs, [cell(level, h_eps, _lane()) for level in levels])
        records.extend(_fit_records("rates-moment", "sup_gap_sq", "h", h_fit, theta, delta, seed))

    if eps_sweep:
        values = [cell(eps_level, eps, _lane(i)) for i, eps in enumerate(eps_sweep)]
        eps_fit = fit_rate(*_positive_points(eps_sweep, values))
        records.extend(
            _fit_records("rates-moment", "sup_gap_sq", "eps", eps_fit, theta, delta, seed)
        )

    return RateReport(h_slope=h_fit, eps_slope=eps_fit, records=records)


def coupled_variance_rates(
    problem: SddeProblem,
    psi: Payoff,
    theta: float,
    level_sweep: Sequence[int],
    eps_sweep: Sequence[float],
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    eps_for_h: Optional[float] = None,
    level_for_eps: Optional[int] = None,
    uncoupled: bool = True,
    jobs: int = 1,
) -> RateReport:
    """
    Наклоны Var(Ψ(fine(T)) − Ψ(coarse(T))) по h и по ε.
    uncoupled=True добавляет ту же дисперсию для независимых путей.
    """
    levels, h_eps, eps_level = _sweep_setup(
        problem, level_sweep, eps_sweep, eps_for_h, level_for_eps
    )
    records: List[ResultRecord] = []
    h_fit = eps_fit = None
    common = dict(theta=theta, delta=delta, samples=n_paths, seed=seed)

    def cell(level: int, eps: float, lane: int) -> float:
        h = problem.horizon * float(M) ** (-level)
        where = dict(level=level, h=h, eps=eps, **common)
        var, sup = payoff_delta_variances(
            problem, psi, level, M, theta, delta, eps, n_paths, seed, lane=lane, jobs=jobs
        )
        records.append(_record("rates-variance", "var_delta", var, **where))
        records.append(_record("rates-variance", "sup_var_delta", sup, **where))
        if uncoupled:
            u_var, u_sup = payoff_delta_variances(
                problem, psi, level, M, theta, delta, eps, n_paths, seed,
                lane=lane, coupled=False, jobs=jobs,
            )
            records.append(_record("rates-variance", "var_uncoupled", u_var, **where))
            records.append(_record("rates-variance", "sup_var_uncoupled", u_sup, **where))
        logger.info(f"Дисперсия пары: l={level}, ε={eps:.3g}, Var = {var:.4e}")
        return var

    if levels:
        hs = [problem.horizon * float(M) ** (-level) for level in levels]
        variances = [cell(level, h_eps, _lane()) for level in levels]
        h_fit = fit_rate(hs, variances)
        records.extend(_fit_records("rates-variance", "var_delta", "h", h_fit, theta, delta, seed))

    if eps_sweep:
        variances = [cell(eps_level, eps, _lane(i)) for i, eps in enumerate(eps_sweep)]
        eps_fit = fit_rate(*_positive_points(eps_sweep, variances))
        records.extend(
            _fit_records("rates-variance", "var_delta", "eps", eps_fit, theta, delta, seed)
        )

    return RateReport(h_slope=h_fit, eps_slope=eps_fit, records=records)


# ---------- сильная ошибка ----------
def strong_errors(
    problem: SddeProblem,
    psi: Payoff,
    theta: float,
    level_sweep: Sequence[int],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    ref_extra: int = 3,
    jobs: int = 1,
) -> List[float]:
    """
    E|Ψ(X_ref(T)) − Ψ(X_h(T))|² для каждого уровня свипа.
    Эталон считается на уровне max+ref_extra, приращения уровня l суммируются из эталонных.
    """
    levels = _check_levels(level_sweep)
    if ref_extra < 1:
        raise ConfigError(f"ref_extra={ref_extra} должно быть ≥ 1")
    p = problem.with_noise_scale(eps)
    ref_level = levels[-1] + ref_extra
    ref_grid = grid_for_level(p, ref_level, M, theta)
    grids = [grid_for_level(p, level, M, theta) for level in levels]
    sqrt_h = math.sqrt(ref_grid.step_h)

    def cell(first: int, count: int) -> Array:
        xi = stack_normals(level_streams(seed, ref_level, first, count, p.dim_noise, M))
        ref = _located(ref_level, first, lambda: integrate_theta_em(
            p, ref_grid, sqrt_h * xi, taming_for(p, ref_grid.step_h, delta, M)
        ))
        psi_ref = psi(ref.terminal())
        out = np.empty((count, len(levels)))
        for j, (level, grid) in enumerate(zip(levels, grids)):
            dW = sqrt_h * aggregate_increments(xi, M ** (ref_level - level))
            x = _located(level, first, lambda: integrate_theta_em(
                p, grid, dW, taming_for(p, grid.step_h, delta, M)
            ))
            out[:, j] = (psi_ref - psi(x.terminal())) ** 2
        return np.sum(out, axis=0)

    totals = np.sum(_map_chunks(n_paths, jobs, cell), axis=0)
    return [float(v) for v in totals / n_paths]


def strong_error_rate(
    problem: SddeProblem,
    psi: Payoff,
    theta: float,
    level_sweep: Sequence[int],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    jobs: int = 1,
) -> RateReport:
    """Наклон log E|Ψ(X_ref(T)) − Ψ(X_h(T))|² по log h."""
    levels = _check_levels(level_sweep)
    if len(levels) < 3:
        raise RateFitError(f"регрессия требует ≥ 3 уровней, получено {len(levels)}")
    errors = strong_errors(
        problem, psi, theta, levels, eps, n_paths, seed, delta=delta, M=M, jobs=jobs
    )
    hs = [problem.horizon * float(M) ** (-level) for level in levels]
    records = [
        _record("rates-strong", "sq_error", err, level=level, h=h, eps=eps,
                theta=theta, delta=delta, samples=n_paths, seed=seed)
        for level, h, err in zip(levels, hs, errors)
    ]
    fit = fit_rate(hs, errors)
    logger.info(f"Сильная ошибка: ε={eps:.3g}, наклон {fit.slope:.3f} (r²={fit.r_squared:.3f})")
    records.extend(_fit_records("rates-strong", "sq_error", "h", fit, theta, delta, seed))
    return RateReport(h_slope=fit, eps_slope=None, records=records)


# ---------- приращения, смещение, моменты ----------
def _coarse_blocks(x: Array, M: int) -> Array:
    """Узлы (пути, N+1, a) → разности X(t_n^k) − X(t_n), форма (пути, N/M, M, a)."""
    n_paths, n_nodes, dim = x.shape
    blocks = x[:, : n_nodes - 1].reshape(n_paths, (n_nodes - 1) // M, M, dim)
    return blocks - blocks[:, :, :1]


def increment_moment_rate(
    problem: SddeProblem,
    theta: float,
    level_sweep: Sequence[int],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    within_interval: bool = False,
    jobs: int = 1,
) -> RateReport:
    """
    sup_n E|X(t_{n+1}) − X(t_n)|² по h; within_interval=True меряет
    sup_{n,k} E|X(t_n^k) − X(t_n)|² внутри грубого интервала, по M·h.
    """
    levels = _check_levels(level_sweep)
    p = problem.with_noise_scale(eps)
    statistic = "interval_increment_sq" if within_interval else "increment_sq"
    xs, values, records = [], [], []
    for level in levels:
        def cell(first: int, count: int, level: int = level) -> Array:
            x = level_paths(p, level, M, theta, delta, first, count, seed).values()
            if within_interval:
                d = _coarse_blocks(x, M)
            else:
                d = np.diff(x, axis=1)
            return np.sum(np.sum(d * d, axis=-1), axis=0)

        per_node = np.sum(_map_chunks(n_paths, jobs, cell), axis=0) / n_paths
        value = float(np.max(per_node))
        h = p.horizon * float(M) ** (-level)
        xs.append(M * h if within_interval else h)
        values.append(value)
        records.append(_record("rates-increment", statistic, value, level=level, h=h, eps=eps,
                               theta=theta, delta=delta, samples=n_paths, seed=seed))
    fit = fit_rate(xs, values)
    records.extend(_fit_records("rates-increment", statistic, "h", fit, theta, delta, seed))
    return RateReport(h_slope=fit, eps_slope=None, records=records)


def interval_bias_rate(
    problem: SddeProblem,
    theta: float,
    level_sweep: Sequence[int],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    jobs: int = 1,
) -> RateReport:
    """sup_{n,k} |E[X(t_n^k) − X(t_n)]| против M·h_l; ожидается наклон 1."""
    levels = _check_levels(level_sweep)
    p = problem.with_noise_scale(eps)
    xs, values, records = [], [], []
    for level in levels:
        def cell(first: int, count: int, level: int = level) -> Array:
            x = level_paths(p, level, M, theta, delta, first, count, seed).values()
            return np.sum(_coarse_blocks(x, M), axis=0)

        mean_gap = np.sum(_map_chunks(n_paths, jobs, cell), axis=0) / n_paths
        value = float(np.max(np.linalg.norm(mean_gap, axis=-1)))
        h = p.horizon * float(M) ** (-level)
        xs.append(M * h)
        values.append(value)
        records.append(_record("rates-bias", "interval_bias", value, level=level, h=h, eps=eps,
                               theta=theta, delta=delta, samples=n_paths, seed=seed))
    fit = fit_rate(xs, values)
    records.extend(_fit_records("rates-bias", "interval_bias", "h", fit, theta, delta, seed))
    return RateReport(h_slope=fit, eps_slope=None, records=records)


def moment_bound_profile(
    problem: SddeProblem,
    theta: float,
    level_sweep: Sequence[int],
    eps: float,
    n_paths: int,
    seed: int,
    *,
    delta: Optional[float] = None,
    M: int = 2,
    require_taming: bool = True,
    threshold: float = 1e10,
    jobs: int = 1,
) -> RateReport:
    """
    По уровням: E sup_n |X|², выборочный max sup_n |X| и доля путей,
    превысивших threshold. Неукрощённый взрыв даёт inf, а не ошибку.
    """
    levels = _check_levels(level_sweep)
    p = problem.with_noise_scale(eps)
    records = []
    for level in levels:
        def cell(first: int, count: int, level: int = level) -> Array:
            with np.errstate(over="ignore", invalid="ignore"):
                x = level_paths(
                    p, level, M, theta, delta, first, count, seed, require_taming=require_taming
                ).values()
                norms = np.linalg.norm(x, axis=-1)
            norms = np.where(np.isnan(norms), np.inf, norms)
            return np.max(norms, axis=1)

        sups = np.concatenate(_map_chunks(n_paths, jobs, cell))
        h = p.horizon * float(M) ** (-level)
        with np.errstate(over="ignore"):
            mean_sq = float(np.mean(sups ** 2))
        common = dict(
            level=level, h=h, eps=eps, theta=theta, delta=delta, samples=n_paths, seed=seed
        )
        records.append(_record("moments", "sup_sq_moment", mean_sq, **common))
        records.append(_record("moments", "max_sup_abs", float(np.max(sups)), **common))
        above = float(np.mean(sups > threshold))
        records.append(_record("moments", "frac_above_threshold", above, **common))
        logger.info(f"Моменты: l={level}, E sup|X|² = {mean_sq:.4e}, max = {np.max(sups):.4e}")
    return RateReport(h_slope=None, eps_slope=None, records=records)
