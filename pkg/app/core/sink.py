import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TextIO

from app.core.config import settings
from app.core.logging import log_debug, log_info, log_error

logger = logging.getLogger(__name__)


def dumps(record: Dict[str, Any]) -> str:
    """Deterministic JSON line for a record"""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class ResultSink:
    _instance: Optional["ResultSink"] = None
    _root: Optional[Path] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(ResultSink, cls).__new__(cls)
        return cls._instance

    def initialize(self, root: Optional[str] = None) -> Path:
        """Create the output directory"""
        target = Path(root or settings.output_dir())
        try:
            target.mkdir(parents=True, exist_ok=True)
            self._root = target
            log_info(logger, f"Result sink ready at {target}")
            return target
        except OSError as e:
            log_error(logger, f"Failed to prepare result directory {target}: {e}", exc_info=e)
            raise

    @property
    def root(self) -> Path:
        if self._root is None:
            raise RuntimeError("Result sink not initialized")
        return self._root

    def path(self, name: str) -> Path:
        return self.root / name

    def write_jsonl(self, name: str, records: Iterable[Dict[str, Any]]) -> Path:
        target = self.path(name)
        with SinkWriter(target) as handle:
            for record in records:
                handle.write(dumps(record) + "\n")
        return target

    def write_csv(self, name: str, rows: List[Dict[str, Any]]) -> Path:
        target = self.path(name)
        with SinkWriter(target) as handle:
            if rows:
                writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()), lineterminator="\n")
                writer.writeheader()
                writer.writerows(rows)
        return target

    def write_json(self, name: str, document: Dict[str, Any]) -> Path:
        target = self.path(name)
        with SinkWriter(target) as handle:
            handle.write(json.dumps(document, sort_keys=True, indent=2) + "\n")
        return target

    def close(self) -> None:
        if self._root is not None:
            log_debug(logger, "Closing result sink")
            self._root = None


result_sink = ResultSink()  # singleton


class SinkWriter:
    """Context manager writing a file atomically (temp file then rename)"""

    def __init__(self, target: Path):
        self.target = target
        self.partial = target.with_suffix(target.suffix + ".part")
        self.handle: Optional[TextIO] = None

    def __enter__(self) -> TextIO:
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.handle = open(self.partial, "w", encoding="utf-8", newline="")
        return self.handle

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.handle:
            self.handle.close()
            if exc_type:
                self.partial.unlink(missing_ok=True)
            else:
                self.partial.replace(self.target)
                log_debug(logger, f"Wrote {self.target}")
