from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError

Array = np.ndarray
DriftFn = Callable[[Array, Array], Array]
DiffusionFn = Callable[[Array, Array], Array]
InitialSegment = Callable[[float], Array]


# --- Регулярность коэффициентов ---
@dataclass(frozen=True)
class GlobalLipschitz:
    """Глобальное условие Липшица с константой alpha > 1."""

    alpha: float

    def __post_init__(self) -> None:
        if not self.alpha > 1.0:
            raise ConfigError(f"GlobalLipschitz: alpha={self.alpha} должно быть > 1")


@dataclass(frozen=True)
class OneSidedLipschitz:
    """Односторонний Липшиц для сноса и линейный рост диффузии."""

    alpha1: float
    alpha2: float
    alpha3: float
    growth_r: float
    p: float = 2.0

    def __post_init__(self) -> None:
        if not (self.alpha1 > 1.0 and self.alpha2 > 1.0):
            raise ConfigError(
                f"OneSidedLipschitz: alpha1={self.alpha1}, alpha2={self.alpha2} должны быть > 1"
            )
        if not self.alpha3 > 0.0:
            raise ConfigError(f"OneSidedLipschitz: alpha3={self.alpha3} должно быть > 0")
        if not self.growth_r >= 1.0:
            raise ConfigError(f"OneSidedLipschitz: r={self.growth_r} должно быть ≥ 1")
        if not self.p >= 2.0:
            raise ConfigError(f"OneSidedLipschitz: p={self.p} должно быть ≥ 2")


Regularity = Union[GlobalLipschitz, OneSidedLipschitz]


# --- Задача ---
@dataclass(frozen=True)
class SddeProblem:
    """
    dX = f(X(t), X(t−τ))dt + ε g(X(t), X(t−τ))dW, X(θ) = ξ(θ) на [−τ, 0].

    drift и diffusion векторизованы: принимают массивы формы (..., a)
    и возвращают (..., a) и (..., a, d) соответственно.
    """

    name: str
    dim_state: int
    dim_noise: int
    drift: DriftFn
    diffusion: DiffusionFn
    delay: float
    horizon: float
    noise_scale: float
    initial_segment: InitialSegment
    regularity: Regularity
    coefficients: Dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ConfigError(
                f"{self.name}: размерности должны быть положительны "
                f"(a={self.dim_state}, d={self.dim_noise})"
            )
        if not self.delay > 0.0:
            raise ConfigError(f"{self.name}: запаздывание τ={self.delay} должно быть > 0")
        if not self.horizon > 0.0:
            raise ConfigError(f"{self.name}: горизонт T={self.horizon} должен быть > 0")
        # концы [0, 1] допускаются: при ε = 0 путь совпадает со скелетом
        if not 0.0 <= self.noise_scale <= 1.0:
            raise ConfigError(f"{self.name}: ε={self.noise_scale} вне [0, 1]")

    @property
    def is_one_sided(self) -> bool:
        return isinstance(self.regularity, OneSidedLipschitz)

    def with_noise_scale(self, eps: float) -> "SddeProblem":
        return replace(self, noise_scale=float(eps))

    def initial_value(self) -> Array:
        return np.asarray(self.initial_segment(0.0), dtype=float).reshape(self.dim_state)


@dataclass(frozen=True)
class Payoff:
    """Функционал Ψ: R^a → R с ограниченными первыми и вторыми производными."""

    eval: Callable[[Array], Array]
    derivative_bound: float
    name: str = "custom"

    def __call__(self, x: Array) -> Array:
        return np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float)


# --- Сетки ---
@dataclass(frozen=True)
class GridSpec:
    step_h: float
    steps_per_delay_m: int
    total_steps_N: int
    theta: float
    level: Optional[int] = None
    refinement_M: int = 1


@dataclass(frozen=True)
class LevelPair:
    """Пара сеток уровня l: мелкая h_l = T·M^{−l} и грубая h_{l−1} = M·h_l."""

    M: int
    level_l: int
    h_fine: float
    h_coarse: float
    m_fine: int
    theta: float
    delta: Optional[float] = None

    @property
    def m_coarse(self) -> int:
        return self.m_fine // self.M

    @property
    def n_coarse(self) -> int:
        return self.M ** (self.level_l - 1)

    @property
    def n_fine(self) -> int:
        return self.M ** self.level_l


@dataclass
class CoupledPair:
    """Мелкий и грубый пути на общем шуме; массивы (пути, узлы, a)."""

    fine_on_coarse_grid: Array
    coarse: Array
    fine: Array
    pair: LevelPair

    @property
    def n_paths(self) -> int:
        return int(self.coarse.shape[0])


# --- Статистика уровней ---
@dataclass(frozen=True)
class LevelStats:
    """
    Потоковые статистики разности Ψ(fine) − Ψ(coarse) на уровне.
    Для базового уровня «разность» равна самому Ψ(fine).
    Слияние по формуле Чана, ассоциативно с точностью округления.
    """

    level: int
    samples: int
    mean_delta: float
    m2_delta: float
    mean_fine: float
    m2_fine: float
    cost_units: float

    @property
    def var_delta(self) -> float:
        if self.samples < 2:
            return 0.0
        return max(self.m2_delta / (self.samples - 1), 0.0)

    @property
    def var_fine(self) -> float:
        if self.samples < 2:
            return 0.0
        return max(self.m2_fine / (self.samples - 1), 0.0)

    @property
    def cost_per_sample(self) -> float:
        return self.cost_units / self.samples if self.samples else 0.0

    @classmethod
    def empty(cls, level: int) -> "LevelStats":
        return cls(level, 0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_samples(
        cls, level: int, deltas: Array, fines: Array, cost_per_sample: float
    ) -> "LevelStats":
        deltas = np.asarray(deltas, dtype=float).ravel()
        fines = np.asarray(fines, dtype=float).ravel()
        n = int(deltas.size)
        if n == 0:
            return cls.empty(level)
        mean_d = float(np.mean(deltas))
        mean_f = float(np.mean(fines))
        # двухпроходная сумма квадратов отклонений
        m2_d = float(np.sum((deltas - mean_d) ** 2))
        m2_f = float(np.sum((fines - mean_f) ** 2))
        return cls(level, n, mean_d, m2_d, mean_f, m2_f, cost_per_sample * n)

    def merge(self, other: "LevelStats") -> "LevelStats":
        if other.level != self.level:
            raise ValueError(f"слияние разных уровней: {self.level} и {other.level}")
        if other.samples == 0:
            return self
        if self.samples == 0:
            return other
        na, nb = self.samples, other.samples
        n = na + nb
        dd = other.mean_delta - self.mean_delta
        df = other.mean_fine - self.mean_fine
        return LevelStats(
            level=self.level,
            samples=n,
            mean_delta=self.mean_delta + dd * nb / n,
            m2_delta=self.m2_delta + other.m2_delta + dd * dd * na * nb / n,
            mean_fine=self.mean_fine + df * nb / n,
            m2_fine=self.m2_fine + other.m2_fine + df * df * na * nb / n,
            cost_units=self.cost_units + other.cost_units,
        )


def merge_all(stats: Sequence[LevelStats]) -> LevelStats:
    if not stats:
        raise ValueError("нечего сливать")
    acc = stats[0]
    for s in stats[1:]:
        acc = acc.merge(s)
    return acc


@dataclass(frozen=True)
class MlmcEstimate:
    value: float
    levels: Tuple[LevelStats, ...]
    base_level_mean: float
    total_cost: float
    std_error: float
    status: Literal["ok", "target_not_met"] = "ok"

    @property
    def base_level(self) -> int:
        return self.levels[0].level


# --- Регрессия скоростей ---
@dataclass(frozen=True)
class RateFit:
    """МНК-прямая log y = intercept + slope·log x."""

    slope: float
    intercept: float
    r_squared: float
    points: Tuple[Tuple[float, float], ...]

    def predict(self, x: float) -> float:
        return math.exp(self.intercept + self.slope * math.log(x))


@dataclass(frozen=True)
class EnvelopeFit:
    """y ≈ Σ_j C_j·Π_i x_i^{e_ij} с C_j ≥ 0 (неотрицательный МНК)."""

    exponents: Tuple[Tuple[float, ...], ...]
    constants: Tuple[float, ...]
    r_squared: float
    # множитель, при котором огибающая мажорирует все точки
    cover: float


@dataclass(frozen=True)
class ResultRecord:
    """Строка таблицы результатов (общая CSV-схема всех экспериментов)."""

    experiment: str
    statistic: str
    value: float
    level: Optional[int] = None
    h: Optional[float] = None
    eps: Optional[float] = None
    theta: Optional[float] = None
    delta: Optional[float] = None
    samples: Optional[int] = None
    seed: Optional[int] = None


@dataclass
class RateReport:
    h_slope: Optional[RateFit]
    eps_slope: Optional[RateFit]
    records: list = field(default_factory=list)
