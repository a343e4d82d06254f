import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from PySide6.QtCore import QObject, Signal

from core.config import RunConfig
from core.coupling import make_level_pair
from core.models import LevelStats, Payoff, RateReport, ResultRecord, SddeProblem
from core.problems import builtin_payoff, builtin_problem
from core.scheme import check_admissible, check_taming, grid_for_level, make_grid, taming_for
from core.utils import Logger
from services import analysis
from services.mlmc_estimator import MlmcEstimator
from services.reporting import estimate_summary, fit_summary, level_records

logger = Logger("ExperimentController")


@dataclass
class ExperimentResult:
    records: List[ResultRecord]
    summary: Dict[str, Any] = field(default_factory=dict)


class ExperimentController(QObject):
    """Собирает задачу из RunConfig, проверяет её и запускает эксперимент."""

    # --- сигналы ---
    progress = Signal(str)

    def __init__(self, parent: Optional[QObject] = None) -> None:
        super().__init__(parent)
        self._handlers: Dict[str, Callable[[RunConfig, SddeProblem, Payoff], ExperimentResult]] = {
            "path": self._run_path,
            "coupled": self._run_coupled,
            "mlmc": self._run_mlmc,
            "rates-strong": self._run_strong,
            "rates-moment": self._run_moment,
            "rates-variance": self._run_variance,
            "deviation": self._run_deviation,
            "rates-increment": self._run_increment,
            "rates-bias": self._run_bias,
            "moments": self._run_moments,
        }

    # ---------- публичные методы ----------
    def build_problem(self, config: RunConfig) -> SddeProblem:
        overrides = dict(config.coefficients)
        if len(config.eps) == 1:
            overrides["eps"] = config.eps[0]
        return builtin_problem(config.problem, overrides)

    def validate(self, config: RunConfig, problem: SddeProblem) -> None:
        """Все сетки эксперимента проверяются до первой симуляции."""
        if config.h is not None:
            grid = make_grid(problem, config.h, config.theta)
            check_taming(problem, taming_for(problem, grid.step_h, config.delta, config.M))
            check_admissible(problem, grid.step_h, config.theta)
            return
        kind = config.experiment
        if kind == "path":
            self._validate_base(config, problem, self._single_level(config))
        elif kind in ("coupled", "deviation"):
            level = self._single_level(config)
            if kind == "coupled":
                make_level_pair(problem, level, config.M, config.theta, config.delta)
            else:
                self._validate_base(config, problem, level)
        elif kind == "mlmc":
            estimator = self._estimator(config, problem, builtin_payoff(config.payoff))
            estimator.validate_base(config.base_level)
            for level in range(config.base_level + 1, config.max_level + 1):
                estimator.level_pair(level)
        elif kind in ("rates-moment", "rates-variance"):
            for level in self._levels(config):
                make_level_pair(problem, level, config.M, config.theta, config.delta)
        else:
            for level in self._levels(config):
                self._validate_base(config, problem, level)

    def run(self, config: RunConfig) -> ExperimentResult:
        started = time.perf_counter()
        problem = self.build_problem(config)
        psi = builtin_payoff(config.payoff)
        self.validate(config, problem)
        logger.info(
            f"Старт эксперимента {config.experiment}: задача {problem.name}, seed={config.seed}"
        )
        self.progress.emit(f"Эксперимент {config.experiment} ({problem.name})")

        result = self._handlers[config.experiment](config, problem, psi)

        wall = time.perf_counter() - started
        result.summary.update({
            "config": config.echo(),
            "wall_time_s": wall,
            "records": len(result.records),
        })
        logger.info(f"Эксперимент {config.experiment} завершён за {wall:.2f} с")
        return result

    # ---------- реализация EstimationEventHandler ----------
    def on_level_done(self, stats: LevelStats) -> None:
        self.progress.emit(
            f"уровень {stats.level}: {stats.samples} выборок, Var = {stats.var_delta:.3e}"
        )

    def on_allocation(self, level: int, samples: int) -> None:
        self.progress.emit(f"уровень {level}: до {samples} выборок")

    # ---------- вспомогательные методы ----------
    @staticmethod
    def _single_level(config: RunConfig) -> int:
        return config.max_level if config.level is None else config.level

    @staticmethod
    def _levels(config: RunConfig) -> List[int]:
        return list(range(config.base_level, config.max_level + 1))

    @staticmethod
    def _eps_sweep(config: RunConfig) -> List[float]:
        return config.eps_list if len(config.eps) > 1 else []

    @staticmethod
    def _validate_base(config: RunConfig, problem: SddeProblem, level: int) -> None:
        grid = grid_for_level(problem, level, config.M, config.theta)
        check_taming(problem, taming_for(problem, grid.step_h, config.delta, config.M))
        check_admissible(problem, grid.step_h, config.theta)

    def _estimator(self, config: RunConfig, problem: SddeProblem, psi: Payoff) -> MlmcEstimator:
        return MlmcEstimator(
            problem, psi, M=config.M, theta=config.theta, delta=config.delta,
            seed=config.seed, jobs=config.jobs, handler=self,
        )

    def _common(self, config: RunConfig, problem: SddeProblem) -> Dict[str, Any]:
        return dict(eps=problem.noise_scale, theta=config.theta, delta=config.delta,
                    samples=config.samples, seed=config.seed)

    @staticmethod
    def _report(report: RateReport) -> ExperimentResult:
        return ExperimentResult(
            records=list(report.records),
            summary={
                "h_slope": fit_summary(report.h_slope),
                "eps_slope": fit_summary(report.eps_slope),
            },
        )

    # ---------- эксперименты ----------
    def _run_path(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        if config.h is not None:
            grid = make_grid(problem, config.h, config.theta)
            level = None
        else:
            level = self._single_level(config)
            grid = grid_for_level(problem, level, config.M, config.theta)
        stats = analysis.path_statistics(
            problem, psi, grid, config.delta, config.M, config.samples, config.seed,
            jobs=config.jobs,
        )
        common = dict(level=level, h=grid.step_h, **self._common(config, problem))
        records = [ResultRecord(experiment="path", statistic=k, value=v, **common)
                   for k, v in stats.items()]
        return ExperimentResult(records=records, summary={"statistics": stats})

    def _run_coupled(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        level = self._single_level(config)
        h = problem.horizon * float(config.M) ** (-level)
        sup, term = analysis.coupled_gap_moments(
            problem, level, config.M, config.theta, config.delta, problem.noise_scale,
            config.samples, config.seed, jobs=config.jobs,
        )
        stats = self._estimator(config, problem, psi).estimate_level(level, config.samples)
        records = [
            ResultRecord(experiment="coupled", statistic="sup_gap_sq", value=sup,
                         level=level, h=h, **self._common(config, problem)),
            ResultRecord(experiment="coupled", statistic="terminal_gap_sq", value=term,
                         level=level, h=h, **self._common(config, problem)),
        ]
        records.extend(level_records(
            stats, experiment="coupled", h=h, eps=problem.noise_scale, theta=config.theta,
            delta=config.delta, seed=config.seed, base=False,
        ))
        return ExperimentResult(records=records, summary={
            "sup_gap_sq": sup, "terminal_gap_sq": term,
            "mean_delta": stats.mean_delta, "var_delta": stats.var_delta,
        })

    def _run_mlmc(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        estimator = self._estimator(config, problem, psi)
        estimate = estimator.estimate(
            config.base_level,
            config.max_level,
            None if config.target_se is not None else config.samples,
            target_se=config.target_se,
            max_samples=config.max_samples,
        )
        records: List[ResultRecord] = []
        for stats in estimate.levels:
            records.extend(level_records(
                stats, experiment="mlmc",
                h=problem.horizon * float(config.M) ** (-stats.level),
                eps=problem.noise_scale, theta=config.theta, delta=config.delta,
                seed=config.seed, base=(stats.level == estimate.base_level),
            ))
        common = dict(eps=problem.noise_scale, theta=config.theta, delta=config.delta,
                      seed=config.seed, samples=sum(s.samples for s in estimate.levels))
        records.append(ResultRecord("mlmc", "value", estimate.value, **common))
        records.append(ResultRecord("mlmc", "std_error", estimate.std_error, **common))
        return ExperimentResult(records=records, summary={"estimate": estimate_summary(estimate)})

    def _run_strong(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.strong_error_rate(
            problem, psi, config.theta, self._levels(config), problem.noise_scale,
            config.samples, config.seed, delta=config.delta, M=config.M, jobs=config.jobs,
        ))

    def _run_moment(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.coupled_moment_rates(
            problem, config.theta, config.delta, self._levels(config), self._eps_sweep(config),
            config.samples, config.seed, M=config.M, level_for_eps=config.level, jobs=config.jobs,
        ))

    def _run_variance(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.coupled_variance_rates(
            problem, psi, config.theta, self._levels(config), self._eps_sweep(config),
            config.samples, config.seed, delta=config.delta, M=config.M,
            level_for_eps=config.level, jobs=config.jobs,
        ))

    def _run_deviation(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.small_noise_deviation(
            problem, self._single_level(config), config.theta, config.delta, config.eps_list,
            config.samples, config.seed, M=config.M, jobs=config.jobs,
        ))

    def _run_increment(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.increment_moment_rate(
            problem, config.theta, self._levels(config), problem.noise_scale, config.samples,
            config.seed, delta=config.delta, M=config.M, jobs=config.jobs,
        ))

    def _run_bias(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.interval_bias_rate(
            problem, config.theta, self._levels(config), problem.noise_scale, config.samples,
            config.seed, delta=config.delta, M=config.M, jobs=config.jobs,
        ))

    def _run_moments(
        self, config: RunConfig, problem: SddeProblem, psi: Payoff
    ) -> ExperimentResult:
        return self._report(analysis.moment_bound_profile(
            problem, config.theta, self._levels(config), problem.noise_scale, config.samples,
            config.seed, delta=config.delta, M=config.M, jobs=config.jobs,
        ))
