import csv
import json
import os
from typing import Any, Dict, Iterable, List, Optional

from core.models import LevelStats, MlmcEstimate, RateFit, ResultRecord
from core.utils import Logger, atomic_write, format_float

logger = Logger("Reporting")

CSV_COLUMNS = (
    "experiment",
    "level",
    "h",
    "eps",
    "theta",
    "delta",
    "statistic",
    "value",
    "samples",
    "seed",
)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def record_row(record: ResultRecord) -> List[str]:
    return [_cell(getattr(record, column)) for column in CSV_COLUMNS]


def write_csv(path: str, records: Iterable[ResultRecord]) -> None:
    """UTF-8, запятая, обязательный заголовок; файл появляется только целиком."""
    rows = [record_row(r) for r in records]

    def write(f):
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)

    atomic_write(path, write)
    logger.info(f"CSV записан: {path} ({len(rows)} строк)")


def summary_path(csv_path: str) -> str:
    root, _ = os.path.splitext(csv_path)
    return f"{root}.summary.json"


def write_summary(path: str, summary: Dict[str, Any]) -> None:
    def write(f):
        json.dump(summary, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")

    atomic_write(path, write)
    logger.info(f"Сводка записана: {path}")


# ---------- преобразования в записи ----------
def level_records(
    stats: LevelStats,
    *,
    experiment: str,
    h: float,
    eps: float,
    theta: float,
    delta: Optional[float],
    seed: int,
    base: bool,
) -> List[ResultRecord]:
    common = dict(level=stats.level, h=h, eps=eps, theta=theta, delta=delta,
                  samples=stats.samples, seed=seed)
    prefix = "base" if base else "delta"
    return [
        ResultRecord(experiment, f"mean_{prefix}", stats.mean_delta, **common),
        ResultRecord(experiment, f"var_{prefix}", stats.var_delta, **common),
        ResultRecord(experiment, "var_fine", stats.var_fine, **common),
        ResultRecord(experiment, "cost", stats.cost_units, **common),
    ]


def estimate_summary(estimate: MlmcEstimate) -> Dict[str, Any]:
    return {
        "value": estimate.value,
        "std_error": estimate.std_error,
        "base_level_mean": estimate.base_level_mean,
        "total_cost": estimate.total_cost,
        "status": estimate.status,
        "levels": [
            {
                "level": s.level,
                "samples": s.samples,
                "mean_delta": s.mean_delta,
                "var_delta": s.var_delta,
                "mean_fine": s.mean_fine,
                "var_fine": s.var_fine,
                "cost_units": s.cost_units,
            }
            for s in estimate.levels
        ],
    }


def fit_summary(fit: Optional[RateFit]) -> Optional[Dict[str, float]]:
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared}
