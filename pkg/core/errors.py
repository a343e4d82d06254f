"""Исключения библиотеки. Коды выхода CLI привязаны к классам (см. ui/cli.py)."""

from __future__ import annotations

from typing import Optional, Sequence


class SddeError(Exception):
    """Базовая ошибка симуляции."""


class ConfigError(SddeError):
    """Некорректная конфигурация запуска."""


class AdmissibilityError(ConfigError):
    """Шаг не удовлетворяет ограничению допустимости схемы."""

    def __init__(self, inequality: str, detail: str) -> None:
        super().__init__(f"нарушено условие {inequality}: {detail}")
        self.inequality = inequality


class GridAlignmentError(ConfigError):
    """Запаздывание или горизонт не кратны шагу сетки."""


class RegistryError(ConfigError, KeyError):
    def __init__(self, kind: str, name: str, available: Sequence[str]) -> None:
        super().__init__(
            f"неизвестное имя {kind} '{name}'; доступны: {', '.join(sorted(available))}"
        )
        self.name = name
        self.available = tuple(sorted(available))

    def __str__(self) -> str:
        return str(self.args[0])


class NonConvergence(SddeError):
    """Неявный шаг не сошёлся: недопустимый шаг или патологическая задача."""

    def __init__(
        self,
        iterations: int,
        residual: float,
        rows: Sequence[int] = (),
        level: Optional[int] = None,
        path_index: Optional[int] = None,
    ) -> None:
        self.iterations = iterations
        self.residual = residual
        self.rows = tuple(int(r) for r in rows)
        self.level = level
        self.path_index = path_index
        where = ""
        if level is not None:
            where = f" (уровень {level}, путь {path_index})"
        super().__init__(
            f"неявный шаг не сошёлся за {iterations} итераций, невязка {residual:.3e}{where}"
        )

    def locate(self, level: int, first_path: int) -> "NonConvergence":
        """Вернуть копию с привязкой к (уровень, индекс пути)."""
        row = self.rows[0] if self.rows else 0
        return NonConvergence(
            self.iterations, self.residual, self.rows, level=level, path_index=first_path + row
        )


class NoiseIndexError(SddeError, IndexError):
    """Обращение за пределы сетки потока шума или буфера истории."""


class RateFitError(SddeError, ValueError):
    """Регрессия невозможна: мало точек или неположительные значения."""
