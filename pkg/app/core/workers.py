import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from app.core.logging import log_debug

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map fn over items, in a process pool when workers > 1; output keeps input order"""
    tasks = list(items)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    log_debug(logger, f"Dispatching {len(tasks)} tasks to {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
