"""Run log: TinyDB-backed record of pipeline stage events with in-memory pub/sub."""

import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from tinydb import Query, TinyDB

from sarcs.log import get_logger

logger = get_logger(__name__)

_databases: dict[str, tuple[TinyDB, threading.Lock]] = {}
_databases_lock = threading.Lock()


def _open_db(db_path: Path) -> tuple[TinyDB, threading.Lock]:
    """One TinyDB instance and lock per resolved path."""
    key = str(Path(db_path).resolve())
    with _databases_lock:
        if key not in _databases:
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)
            _databases[key] = (TinyDB(key), threading.Lock())
        return _databases[key]


def close_run_logs() -> None:
    """Close every open run log database."""
    with _databases_lock:
        for db, _ in _databases.values():
            db.close()
        _databases.clear()


@dataclass
class Event:
    type: str       # e.g. "pairgen.pair_written", "train.completed"
    source: str     # e.g. "pairgen:pair_003", "train:model.sarm"
    data: dict = field(default_factory=dict)
    timestamp: str = ""


class EventLog:
    """Persistent stage log with pub/sub dispatch."""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self._db, self._lock = _open_db(self.db_path)
        self._handlers: dict[str, list[Callable]] = {}

    @classmethod
    def for_output(cls, output_dir: Path) -> "EventLog":
        return cls(Path(output_dir) / "data" / "events.json")

    def emit(self, event: Event) -> None:
        """Persist an event, then hand it to type-specific and wildcard handlers."""
        if not event.timestamp:
            event.timestamp = datetime.now(timezone.utc).isoformat()

        with self._lock:
            self._db.insert({
                "type": event.type,
                "source": event.source,
                "data": event.data,
                "timestamp": event.timestamp,
            })

        for handler in self._handlers.get(event.type, []) + self._handlers.get("*", []):
            try:
                handler(event)
            except Exception:
                logger.warning("Event handler exception swallowed: event=%s, handler=%s",
                               event.type, getattr(handler, "__name__", repr(handler)))

    def on(self, event_type: str, handler: Callable) -> None:
        """Register a handler for an event type. Use '*' for all events."""
        self._handlers.setdefault(event_type, []).append(handler)

    def query(self, event_type: str | None = None, limit: int = 50) -> list[dict]:
        """Events newest first, optionally filtered by type."""
        with self._lock:
            if event_type:
                results = self._db.search(Query().type == event_type)
            else:
                results = self._db.all()
        results.sort(key=lambda r: r.get("timestamp", ""), reverse=True)
        return results[:limit]


def emit(event_log: "EventLog | None", type: str, source: str, **data) -> None:
    """Emit when a log is attached; library calls work without one."""
    if event_log is not None:
        event_log.emit(Event(type=type, source=source, data=data))
