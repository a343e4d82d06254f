# utils.py
import os
import logging
import tempfile
from logging.handlers import RotatingFileHandler
from typing import Callable, Iterator, List, TextIO, Tuple

import psutil

from .config import cfg


# ---------- логгер ----------
class Logger:
    def __init__(self, name: str = "app"):
        self._log = logging.getLogger(f"mlmc_sdde.{name}")
        self._log.setLevel(logging.DEBUG)

        # один обработчик на имя: модули и тесты создают логгеры многократно
        if not self._log.handlers:
            handler = RotatingFileHandler(
                cfg.log_path,
                maxBytes=5 * 1024 * 1024,
                backupCount=3,
                encoding="utf-8",
                delay=True,
            )
            fmt = logging.Formatter('%(asctime)s [%(levelname)s] %(name)s: %(message)s')
            handler.setFormatter(fmt)
            self._log.addHandler(handler)

    def debug(self, msg: str) -> None:
        self._log.debug(msg)

    def info(self, msg: str) -> None:
        self._log.info(msg)

    def warning(self, msg: str) -> None:
        self._log.warning(msg)

    def error(self, msg: str, *, exc: bool = False) -> None:
        self._log.error(msg, exc_info=exc)


# ---------- параллелизм ----------
def default_jobs() -> int:
    """Число рабочих потоков по умолчанию: логические ядра."""
    try:
        return max(1, psutil.cpu_count(logical=True) or 1)
    except Exception:
        return 1


def chunk_ranges(n_items: int, chunk_size: int, start: int = 0) -> Iterator[Tuple[int, int]]:
    """
    Разбить [start, start + n_items) на порции фиксированного размера.
    Yields: (first, count)
    """
    if chunk_size < 1:
        raise ValueError("chunk_size должен быть ≥ 1")
    first = start
    end = start + n_items
    while first < end:
        count = min(chunk_size, end - first)
        yield (first, count)
        first += count


# ---------- атомарная запись ----------
def atomic_write(path: str, write: Callable[[TextIO], None]) -> None:
    """
    Записать файл через временный файл и rename.
    При ошибке целевой файл не создаётся и не портится.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp_", suffix=os.path.basename(path), dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            write(f)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.remove(tmp)
        except OSError:
            pass
        raise


def format_float(value: float) -> str:
    """Стабильное текстовое представление числа для CSV."""
    return repr(float(value))


def split_list(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]
