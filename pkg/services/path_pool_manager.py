import queue
from typing import Any, Callable, Dict, Iterable, List, Optional

from PySide6.QtCore import QObject, QThreadPool, Signal

from core.utils import Logger, default_jobs
from services.path_worker import ChunkOutcome, PathChunkRunnable

logger = Logger("PathPoolManager")


class PathPoolManager(QObject):
    """
    Пул порций путей поверх QThreadPool.
    Результаты возвращаются в порядке задач, поэтому итог не зависит от числа потоков.
    """

    chunk_finished = Signal(int, int)  # готово, всего

    def __init__(self, max_threads: Optional[int] = None):
        super().__init__()
        self.max_threads = max(1, max_threads or default_jobs())
        self.pool: Optional[QThreadPool] = None
        if self.max_threads > 1:
            self.pool = QThreadPool()
            self.pool.setMaxThreadCount(self.max_threads)
        # runnables с autoDelete=False живут до следующего map()
        self._workers: List[PathChunkRunnable] = []

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """
        Применить fn к каждому элементу; первая ошибка (по порядку задач)
        пробрасывается после завершения всех задач.
        """
        items = list(items)
        if not items:
            return []
        if self.pool is None or len(items) == 1:
            return self._run_inline(fn, items)

        results: "queue.Queue[ChunkOutcome]" = queue.Queue()
        self._workers = [PathChunkRunnable(i, fn, item, results) for i, item in enumerate(items)]
        logger.debug(f"Старт пула: {len(items)} порций, потоков {self.max_threads}")
        for worker in self._workers:
            self.pool.start(worker)

        outcomes: Dict[int, ChunkOutcome] = {}
        while len(outcomes) < len(items):
            out = results.get()
            outcomes[out.index] = out
            self.chunk_finished.emit(len(outcomes), len(items))

        for i in range(len(items)):
            if outcomes[i].error is not None:
                raise outcomes[i].error
        logger.debug(f"Пул завершён: {len(items)} порций")
        return [outcomes[i].value for i in range(len(items))]

    def _run_inline(self, fn: Callable[[Any], Any], items: List[Any]) -> List[Any]:
        values = []
        for i, item in enumerate(items, 1):
            values.append(fn(item))
            self.chunk_finished.emit(i, len(items))
        return values
