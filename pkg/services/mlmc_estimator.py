"""
Многоуровневый Монте-Карло для E[Ψ(X^ε(T))].

Базовый уровень считается обычным theta-EM Монте-Карло, уровни l > base дают связанные
разности Ψ(fine(T)) − Ψ(coarse(T)). Пути уровня l берутся из потоков
(seed, l, индекс пути), поэтому добор выборок продолжает нумерацию путей.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Union

from core.config import cfg
from core.coupling import coupled_payoff_delta, make_level_pair, simulate_coupled
from core.errors import ConfigError, NonConvergence
from core.models import LevelPair, LevelStats, MlmcEstimate, Payoff, SddeProblem, merge_all
from core.rng import level_streams
from core.scheme import (
    check_admissible,
    check_taming,
    grid_for_level,
    taming_for,
    theta_em_path,
)
from core.utils import Logger, chunk_ranges
from services.path_pool_manager import PathPoolManager

logger = Logger("MlmcEstimator")


# ---------- протоколы ----------
class EstimationEventHandler(Protocol):
    def on_level_done(self, stats: LevelStats) -> None: ...
    def on_allocation(self, level: int, samples: int) -> None: ...


# ---------- модели ----------
@dataclass(frozen=True)
class PathChunk:
    level: int
    first_path: int
    count: int


# ---------- основной класс ----------
class MlmcEstimator:
    def __init__(
        self,
        problem: SddeProblem,
        psi: Payoff,
        *,
        M: int = 2,
        theta: float = 0.25,
        delta: Optional[float] = None,
        seed: int = 0,
        jobs: int = 1,
        chunk_size: Optional[int] = None,
        handler: Optional[EstimationEventHandler] = None,
    ):
        if M < 2:
            raise ConfigError(f"M={M}: коэффициент измельчения должен быть ≥ 2")
        self.problem = problem
        self.psi = psi
        self.M = M
        self.theta = theta
        self.delta = delta
        self.seed = seed
        self.chunk_size = chunk_size or cfg.chunk_size
        self.handler = handler
        self.pool = PathPoolManager(max_threads=jobs)

    # ---------- модель стоимости ----------
    def cost_per_sample(self, level: int, base: bool) -> float:
        """Число шагов на выборку: M^l для базового уровня, M^l + M^{l−1} для пары."""
        if base:
            return float(self.M ** level)
        return float(self.M ** level + self.M ** (level - 1))

    # ---------- публичные методы ----------
    def validate_base(self, level: int) -> None:
        grid = grid_for_level(self.problem, level, self.M, self.theta)
        check_taming(self.problem, taming_for(self.problem, grid.step_h, self.delta, self.M))
        check_admissible(self.problem, grid.step_h, self.theta)

    def level_pair(self, level: int) -> LevelPair:
        return make_level_pair(self.problem, level, self.M, self.theta, self.delta)

    def estimate_base(self, level: int, n_samples: int, first_path: int = 0) -> LevelStats:
        """Обычный Монте-Карло Ψ(X_{h_l}(T)) на уровне l."""
        self.validate_base(level)
        return self._run(level, n_samples, first_path, base=True)

    def estimate_level(self, level: int, n_samples: int, first_path: int = 0) -> LevelStats:
        """Статистики Ψ(fine(T)) − Ψ(coarse(T)) по путям first_path … first_path+n−1."""
        self.level_pair(level)
        return self._run(level, n_samples, first_path, base=False)

    def estimate(
        self,
        base_level: int,
        max_level: int,
        samples: Union[int, Sequence[int], None] = None,
        *,
        target_se: Optional[float] = None,
        max_samples: Optional[int] = None,
    ) -> MlmcEstimate:
        if not 0 <= base_level <= max_level:
            raise ConfigError(
                f"уровни: требуется 0 ≤ base_level ≤ max_level, получено {base_level}..{max_level}"
            )
        if self.delta is not None and base_level < 2:
            raise ConfigError(f"укрощённый режим требует base_level ≥ 2, получено {base_level}")
        levels = list(range(base_level, max_level + 1))

        # вся конфигурация проверяется до первой симуляции
        self.validate_base(base_level)
        for level in levels[1:]:
            self.level_pair(level)

        if target_se is None:
            counts = self._fixed_counts(samples, len(levels))
            stats = [
                self._run(level, n, 0, base=(level == base_level))
                for level, n in zip(levels, counts)
            ]
            return self._assemble(stats, "ok")
        return self._estimate_auto(levels, target_se, max_samples)

    # ---------- вспомогательные методы ----------
    @staticmethod
    def _fixed_counts(samples: Union[int, Sequence[int], None], n_levels: int) -> List[int]:
        if samples is None:
            raise ConfigError("нужно задать samples или target_se")
        if isinstance(samples, int):
            counts = [samples] * n_levels
        else:
            counts = [int(s) for s in samples]
        if len(counts) != n_levels:
            raise ConfigError(f"samples: ожидается {n_levels} значений, получено {len(counts)}")
        if any(n < 2 for n in counts):
            raise ConfigError(f"samples={counts}: на каждом уровне нужно минимум 2 выборки")
        return counts

    def _estimate_auto(
        self, levels: List[int], target_se: float, max_samples: Optional[int]
    ) -> MlmcEstimate:
        if target_se <= 0:
            raise ConfigError(f"target_se={target_se} должно быть > 0")
        cap = max_samples or cfg.max_samples_per_level
        pilot = max(2, min(cfg.pilot_samples, cap))
        base = levels[0]
        stats = [self._run(level, pilot, 0, base=(level == base)) for level in levels]

        for _ in range(8):
            weights = [math.sqrt(s.var_delta * s.cost_per_sample) for s in stats]
            total = sum(weights)
            grew = False
            for i, s in enumerate(stats):
                if s.var_delta <= 0.0:
                    continue
                ratio = math.sqrt(s.var_delta / s.cost_per_sample)
                wanted = math.ceil(total * ratio / target_se ** 2)
                add = min(wanted, cap) - s.samples
                if add <= 0:
                    continue
                logger.info(f"Уровень {s.level}: добор {add} выборок (итого {s.samples + add})")
                if self.handler:
                    self.handler.on_allocation(s.level, s.samples + add)
                extra = self._run(s.level, add, s.samples, base=(s.level == base))
                stats[i] = s.merge(extra)
                grew = True
            if not grew:
                break

        estimate = self._assemble(stats, "ok")
        if estimate.std_error > target_se:
            logger.warning(
                f"Цель std_error={target_se:.3g} не достигнута: {estimate.std_error:.3g} "
                f"при лимите {cap} выборок на уровень"
            )
            return MlmcEstimate(
                value=estimate.value,
                levels=estimate.levels,
                base_level_mean=estimate.base_level_mean,
                total_cost=estimate.total_cost,
                std_error=estimate.std_error,
                status="target_not_met",
            )
        return estimate

    def _assemble(self, stats: List[LevelStats], status: str) -> MlmcEstimate:
        base = stats[0]
        value = base.mean_delta
        for s in stats[1:]:
            value += s.mean_delta
        variance = sum(s.var_delta / s.samples for s in stats)
        return MlmcEstimate(
            value=value,
            levels=tuple(stats),
            base_level_mean=base.mean_delta,
            total_cost=sum(s.cost_units for s in stats),
            std_error=math.sqrt(variance),
            status=status,  # type: ignore[arg-type]
        )

    def _run(self, level: int, n_samples: int, first_path: int, base: bool) -> LevelStats:
        if n_samples < 1:
            raise ConfigError(f"n_samples={n_samples} должно быть ≥ 1")
        chunks = [PathChunk(level, first, count)
                  for first, count in chunk_ranges(n_samples, self.chunk_size, first_path)]
        fn = self._base_chunk if base else self._coupled_chunk
        stats = merge_all(self.pool.map(fn, chunks))
        logger.info(
            f"Уровень {level}{' (база)' if base else ''}: {stats.samples} выборок, "
            f"среднее {stats.mean_delta:.6g}, дисперсия {stats.var_delta:.3e}, "
            f"стоимость {stats.cost_units:.0f}"
        )
        if self.handler:
            self.handler.on_level_done(stats)
        return stats

    def _streams(self, chunk: PathChunk):
        return level_streams(
            self.seed, chunk.level, chunk.first_path, chunk.count, self.problem.dim_noise, self.M
        )

    def _base_chunk(self, chunk: PathChunk) -> LevelStats:
        grid = grid_for_level(self.problem, chunk.level, self.M, self.theta)
        taming = taming_for(self.problem, grid.step_h, self.delta, self.M)
        try:
            buf = theta_em_path(self.problem, grid, self._streams(chunk), taming)
        except NonConvergence as e:
            located = e.locate(chunk.level, chunk.first_path)
            logger.error(str(located))
            raise located from e
        fines = self.psi(buf.terminal())
        return LevelStats.from_samples(
            chunk.level, fines, fines, self.cost_per_sample(chunk.level, base=True)
        )

    def _coupled_chunk(self, chunk: PathChunk) -> LevelStats:
        pair = self.level_pair(chunk.level)
        try:
            result = simulate_coupled(self.problem, pair, self._streams(chunk))
        except NonConvergence as e:
            located = e.locate(chunk.level, chunk.first_path)
            logger.error(str(located))
            raise located from e
        fines = self.psi(result.fine_on_coarse_grid[:, -1])
        deltas = coupled_payoff_delta(result, self.psi)
        return LevelStats.from_samples(
            chunk.level, deltas, fines, self.cost_per_sample(chunk.level, base=False)
        )


# ---------- функции модуля ----------
def estimate_level(
    problem: SddeProblem,
    psi: Payoff,
    level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    n_samples: int,
    seed: int,
    *,
    first_path: int = 0,
    jobs: int = 1,
) -> LevelStats:
    if n_samples < 2:
        raise ConfigError(f"n_samples={n_samples}: нужно минимум 2 выборки")
    estimator = MlmcEstimator(problem, psi, M=M, theta=theta, delta=delta, seed=seed, jobs=jobs)
    return estimator.estimate_level(level, n_samples, first_path)


def mlmc_estimate(
    problem: SddeProblem,
    psi: Payoff,
    base_level: int,
    max_level: int,
    M: int,
    theta: float,
    delta: Optional[float],
    samples_per_level: Union[int, Sequence[int], None],
    seed: int,
    *,
    target_se: Optional[float] = None,
    max_samples: Optional[int] = None,
    jobs: int = 1,
    handler: Optional[EstimationEventHandler] = None,
) -> MlmcEstimate:
    estimator = MlmcEstimator(
        problem, psi, M=M, theta=theta, delta=delta, seed=seed, jobs=jobs, handler=handler
    )
    return estimator.estimate(
        base_level, max_level, samples_per_level, target_se=target_se, max_samples=max_samples
    )
