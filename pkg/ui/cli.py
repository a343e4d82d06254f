"""
Командная строка: выбор задачи и эксперимента, запись CSV и сводки запуска.

Коды выхода: 0 успех, 1 прочий сбой симуляции, 2 конфигурация или допустимость шага,
3 неявный шаг не сошёлся, 4 ошибка ввода-вывода.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from core.config import EXPERIMENTS, RunConfig, load_kv_file, seed_from_env
from core.errors import ConfigError, NonConvergence, RateFitError, SddeError
from core.problems import PAYOFFS, PROBLEMS
from core.utils import Logger, default_jobs, split_list
from services.reporting import summary_path, write_csv, write_summary
from ui.experiment_controller import ExperimentController, ExperimentResult

logger = Logger("Cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NON_CONVERGENCE = 3
EXIT_IO = 4

_COEF_PREFIX = "coef."


# ---------- типы аргументов ----------
def _float_list(raw: str) -> List[float]:
    try:
        values = [float(v) for v in split_list(raw)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ожидается список чисел через запятую: '{raw}'")
    if not values:
        raise argparse.ArgumentTypeError("пустой список")
    return values


def _optional_float(raw: str) -> Optional[float]:
    if raw.strip().lower() in ("", "none"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ожидается число или 'none': '{raw}'")


def _coefficient(raw: str) -> Tuple[str, float]:
    name, sep, value = raw.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"ожидается NAME=VALUE: '{raw}'")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"коэффициент '{name.strip()}': '{value}' не число")


# ---------- разбор ----------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmc-sdde",
        description="Theta-схема Эйлера–Маруямы и многоуровневый Монте-Карло "
                    "для стохастических уравнений с запаздыванием и малым шумом.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--experiment", choices=EXPERIMENTS, default="mlmc",
                        help="вид эксперимента")
    parser.add_argument("--problem", choices=sorted(PROBLEMS), default="linear_scalar",
                        help="встроенная задача")
    parser.add_argument("--payoff", choices=sorted(PAYOFFS), default="sigmoid", help="функционал Ψ")
    parser.add_argument("--coef", type=_coefficient, action="append", metavar="NAME=VALUE",
                        default=None, help="замена коэффициента задачи (повторяемый)")
    parser.add_argument("--theta", type=float, default=0.25, help="параметр неявности θ ∈ [0, 1]")
    parser.add_argument("--delta", type=_optional_float, default=None,
                        help="показатель укрощения δ ∈ (0, 1/2]; none — без укрощения")
    parser.add_argument("--M", type=int, default=2, help="коэффициент измельчения")
    parser.add_argument("--base-level", type=int, default=3, help="базовый (самый грубый) уровень")
    parser.add_argument("--max-level", type=int, default=7, help="самый мелкий уровень")
    parser.add_argument("--level", type=int, default=None,
                        help="уровень одиночных экспериментов (по умолчанию --max-level)")
    parser.add_argument("--h", type=float, default=None,
                        help="произвольный согласованный шаг для path")
    parser.add_argument("--eps", type=_float_list, default=None,
                        help="ε задачи; список через запятую — свип по ε")
    parser.add_argument("--samples", type=int, default=10_000, help="число путей на уровень/ячейку")
    parser.add_argument("--target-se", type=float, default=None,
                        help="целевая стандартная ошибка MLMC (автоподбор выборок)")
    parser.add_argument("--max-samples", type=int, default=None,
                        help="лимит выборок на уровень при автоподборе")
    parser.add_argument("--seed", type=int, default=None,
                        help="главное зерно (иначе $MLMC_SDDE_SEED, иначе 0)")
    parser.add_argument("--out", default="results.csv", help="путь CSV с результатами")
    parser.add_argument("--jobs", type=int, default=default_jobs(), help="число рабочих потоков")
    parser.add_argument("--config", default=None, help="файл key=value со значениями по умолчанию")
    return parser


def _file_defaults(
    parser: argparse.ArgumentParser, data: Dict[str, str], source: str
) -> Tuple[Dict[str, Any], Dict[str, float]]:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "coef")}
    defaults: Dict[str, Any] = {}
    coefficients: Dict[str, float] = {}
    for key, raw in data.items():
        if key.startswith(_COEF_PREFIX):
            name = key[len(_COEF_PREFIX):]
            try:
                coefficients[name] = float(raw)
            except ValueError:
                raise ConfigError(f"{source}: коэффициент '{name}' = '{raw}' не число") from None
            continue
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"{source}: неизвестный ключ '{key}'")
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"{source}: {key}={raw}: {e}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(
                f"{source}: {key}={raw}; допустимо: {', '.join(map(str, action.choices))}"
            )
        defaults[key] = value
    return defaults, coefficients


def parse_run_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Встроенные значения → $MLMC_SDDE_SEED → файл --config → флаги."""
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    file_coefficients: Dict[str, float] = {}
    if pre.config:
        defaults, file_coefficients = _file_defaults(parser, load_kv_file(pre.config), pre.config)
        parser.set_defaults(**defaults)
    args = parser.parse_args(argv)

    coefficients = dict(file_coefficients)
    coefficients.update(dict(args.coef or []))
    return RunConfig(
        experiment=args.experiment,
        problem=args.problem,
        coefficients=coefficients,
        payoff=args.payoff,
        theta=args.theta,
        delta=args.delta,
        M=args.M,
        base_level=args.base_level,
        max_level=args.max_level,
        level=args.level,
        h=args.h,
        eps=tuple(args.eps or ()),
        samples=args.samples,
        target_se=args.target_se,
        max_samples=args.max_samples,
        seed=args.seed if args.seed is not None else seed_from_env(0),
        out=args.out,
        jobs=args.jobs,
    )


# ---------- запуск ----------
def _echo_progress(message: str) -> None:
    print(message, file=sys.stderr)


def make_controller() -> ExperimentController:
    """Контроллер, печатающий прогресс в stderr; подключается один раз."""
    controller = ExperimentController()
    controller.progress.connect(_echo_progress)
    return controller


def _print_summary(config: RunConfig, result: ExperimentResult) -> None:
    summary = result.summary
    print(f"Эксперимент: {config.experiment} | задача: {config.problem} | seed: {config.seed}")
    estimate = summary.get("estimate")
    if estimate:
        print(f"Оценка: {estimate['value']!r} ± {estimate['std_error']!r} ({estimate['status']})")
        for lvl in estimate["levels"]:
            print(f"  уровень {lvl['level']}: N={lvl['samples']}, "
                  f"среднее={lvl['mean_delta']:.6g}, Var={lvl['var_delta']:.3e}")
    for key in ("h_slope", "eps_slope"):
        fit = summary.get(key)
        if fit:
            print(f"Наклон ({key}): {fit['slope']:.4f}, r²={fit['r_squared']:.4f}")
    for key, value in summary.get("statistics", {}).items():
        print(f"  {key} = {value!r}")
    print(f"CSV: {config.out} ({summary.get('records', 0)} строк), "
          f"время {summary.get('wall_time_s', 0.0):.2f} с")


def run(config: RunConfig, controller: Optional[ExperimentController] = None) -> int:
    """Выполнить эксперимент и записать CSV + сводку; вернуть код выхода."""
    if controller is None:
        controller = make_controller()
    try:
        result = controller.run(config)
        write_csv(config.out, result.records)
        write_summary(summary_path(config.out), result.summary)
    except (ConfigError, RateFitError) as e:
        logger.error(f"Отклонённая конфигурация: {e}")
        print(f"Ошибка конфигурации: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as e:
        logger.error(f"Неявный шаг не сошёлся: {e}")
        print(f"Неявный шаг не сошёлся: {e}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE
    except OSError as e:
        logger.error(f"Ошибка ввода-вывода: {e}", exc=True)
        print(f"Ошибка ввода-вывода: {e}", file=sys.stderr)
        return EXIT_IO
    except SddeError as e:
        logger.error(f"Сбой симуляции: {e}", exc=True)
        print(f"Сбой симуляции: {e}", file=sys.stderr)
        return EXIT_FAILURE
    _print_summary(config, result)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_run_config(argv)
    except ConfigError as e:
        logger.error(f"Отклонённая конфигурация: {e}")
        print(f"Ошибка конфигурации: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)
