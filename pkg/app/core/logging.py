import logging
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Dict, Iterator, Optional

from app.core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [seed=%(seed)s trial=%(trial)s] %(message)s"
CONTEXT_FIELDS = ("seed", "trial")

_run_context: ContextVar[Dict[str, Any]] = ContextVar("run_context", default={})


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Tag every record logged inside the block with the given seed / trial"""
    token = _run_context.set({**_run_context.get(), **fields})
    try:
        yield
    finally:
        _run_context.reset(token)


class RunContextFilter(logging.Filter):
    """Fills the context fields of a record; values passed as extra win"""

    def filter(self, record: logging.LogRecord) -> bool:
        context = _run_context.get()
        for name in CONTEXT_FIELDS:
            if not hasattr(record, name):
                setattr(record, name, context.get(name, "-"))
        return True


def initialize_logging(level: Optional[str] = None) -> None:
    """Initialize application logging"""
    handler = logging.StreamHandler(sys.stderr)
    handler.addFilter(RunContextFilter())
    logging.basicConfig(
        level=getattr(logging, level or settings.log_level(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[handler],
    )


def log_info(logger: logging.Logger, message: str, **kwargs: Any) -> None:
    logger.info(message, extra=kwargs)


def log_debug(logger: logging.Logger, message: str, **kwargs: Any) -> None:
    logger.debug(message, extra=kwargs)


def log_warning(
    logger: logging.Logger, message: str, exc_info: Optional[Exception] = None, **kwargs: Any
) -> None:
    logger.warning(message, exc_info=exc_info, extra=kwargs)


def log_error(
    logger: logging.Logger, message: str, exc_info: Optional[Exception] = None, **kwargs: Any
) -> None:
    logger.error(message, exc_info=exc_info, extra=kwargs)
