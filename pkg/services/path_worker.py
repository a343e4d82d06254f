import queue
from dataclasses import dataclass
from typing import Any, Callable, Optional

from PySide6.QtCore import QRunnable

from core.utils import Logger

logger = Logger("PathWorker")


@dataclass
class ChunkOutcome:
    index: int
    value: Any = None
    error: Optional[BaseException] = None


class PathChunkRunnable(QRunnable):
    """Worker для одной порции путей: fn(item) в потоке пула, итог уходит в общую очередь."""

    def __init__(
            self,
            index: int,
            fn: Callable[[Any], Any],
            item: Any,
            results: "queue.Queue[ChunkOutcome]",
    ):
        super().__init__()
        # объектом владеет менеджер пула, а не QThreadPool
        self.setAutoDelete(False)
        self.index = index
        self.fn = fn
        self.item = item
        self.results = results

    def run(self):
        try:
            value = self.fn(self.item)
        except BaseException as e:
            logger.error(f"Сбой в порции #{self.index}: {e}")
            self.results.put(ChunkOutcome(index=self.index, error=e))
            return
        self.results.put(ChunkOutcome(index=self.index, value=value))
