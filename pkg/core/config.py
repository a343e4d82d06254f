import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError

SEED_ENV = "MLMC_SDDE_SEED"
HOME_ENV = "MLMC_SDDE_HOME"

EXPERIMENTS = (
    "path",
    "coupled",
    "mlmc",
    "rates-strong",
    "rates-moment",
    "rates-variance",
    "deviation",
    "rates-increment",
    "rates-bias",
    "moments",
)


def parse_kv_text(text: str, source: str = "<text>") -> Dict[str, str]:
    """Разобрать плоский формат key=value (строки с '#' пропускаются)."""
    data: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: ожидается key=value, получено '{line}'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}: пустой ключ")
        data[key] = value.strip()
    return data


def load_kv_file(path: str) -> Dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_kv_text(f.read(), source=path)
    except OSError as e:
        raise ConfigError(f"не удалось прочитать конфиг {path}: {e}") from e


class Config:
    def __init__(self):
        self.base_dir = self._get_base_dir()
        self.log_path = os.path.join(self.base_dir, "mlmc_sdde.log")

        # --- численные параметры ---
        self.solver_tol = 1e-12
        self.solver_max_iter = 200
        # размер порции путей на одну задачу пула; не зависит от --jobs
        self.chunk_size = 256
        self.pilot_samples = 100
        self.max_samples_per_level = 1_000_000

    @staticmethod
    def _get_base_dir():
        home = os.environ.get(HOME_ENV)
        if home:
            return home
        if getattr(sys, 'frozen', False):
            return os.path.dirname(sys.executable)
        return os.getcwd()


# Глобальный экземпляр конфига
cfg = Config()


def seed_from_env(default: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV}='{raw}' не является целым числом") from e


# --- параметры одного запуска CLI ---
@dataclass
class RunConfig:
    experiment: str = "mlmc"
    problem: str = "linear_scalar"
    coefficients: Dict[str, float] = field(default_factory=dict)
    payoff: str = "sigmoid"
    theta: float = 0.25
    delta: Optional[float] = None
    M: int = 2
    base_level: int = 3
    max_level: int = 7
    level: Optional[int] = None
    h: Optional[float] = None
    eps: Tuple[float, ...] = ()
    samples: int = 10_000
    target_se: Optional[float] = None
    max_samples: Optional[int] = None
    seed: int = 0
    out: str = "results.csv"
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"неизвестный эксперимент '{self.experiment}'; доступны: {', '.join(EXPERIMENTS)}"
            )
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta={self.theta} вне [0, 1]")
        if self.delta is not None and not 0.0 < self.delta <= 0.5:
            raise ConfigError(f"delta={self.delta} вне (0, 1/2]")
        if self.M < 2:
            raise ConfigError(f"M={self.M}: коэффициент измельчения должен быть ≥ 2")
        if self.base_level < 0 or self.base_level > self.max_level:
            raise ConfigError(
                f"уровни: требуется 0 ≤ base_level ≤ max_level, получено "
                f"{self.base_level}..{self.max_level}"
            )
        if self.samples < 2:
            raise ConfigError(f"samples={self.samples}: нужно минимум 2 выборки")
        if self.target_se is not None and self.target_se <= 0:
            raise ConfigError(f"target_se={self.target_se} должно быть > 0")
        if self.jobs < 1:
            raise ConfigError(f"jobs={self.jobs} должно быть ≥ 1")

    @property
    def eps_list(self) -> List[float]:
        return list(self.eps)

    def echo(self) -> Dict[str, object]:
        """Плоское представление для сводки запуска."""
        return {
            "experiment": self.experiment,
            "problem": self.problem,
            "coefficients": dict(sorted(self.coefficients.items())),
            "payoff": self.payoff,
            "theta": self.theta,
            "delta": self.delta,
            "M": self.M,
            "base_level": self.base_level,
            "max_level": self.max_level,
            "level": self.level,
            "h": self.h,
            "eps": list(self.eps),
            "samples": self.samples,
            "target_se": self.target_se,
            "max_samples": self.max_samples,
            "seed": self.seed,
            "out": self.out,
            "jobs": self.jobs,
        }
