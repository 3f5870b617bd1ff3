"""Pipeline notifications fanned out to pluggable sinks.

A sink failure is reported back to the caller but never interrupts the
pipeline: losing a webhook must not lose market data.
"""

from __future__ import annotations

import json
import sys
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Protocol


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


@dataclass(frozen=True)
class NotificationEvent:
    occurred_at: int
    severity: Severity
    subject: str
    body: str = ""
    context: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "occurred_at": self.occurred_at,
                "severity": self.severity.value,
                "subject": self.subject,
                "body": self.body,
                "context": self.context,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class Sink(Protocol):
    name: str

    def emit(self, event: NotificationEvent) -> None: ...


class LogFileSink:
    """Appends one JSON line per event; the file is the audit trail."""

    def __init__(self, path: str | Path):
        self.name = "logfile"
        self.path = Path(path)
        self._lock = threading.Lock()

    def emit(self, event: NotificationEvent) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(event.to_json() + "\n")


class StderrSink:
    def __init__(self, stream: IO[str] | None = None, min_severity: Severity = Severity.WARNING):
        self.name = "stderr"
        self.stream = stream if stream is not None else sys.stderr
        self.min_severity = min_severity

    def emit(self, event: NotificationEvent) -> None:
        order = [Severity.INFO, Severity.WARNING, Severity.ERROR]
        if order.index(event.severity) < order.index(self.min_severity):
            return
        self.stream.write(
            f"[{event.severity.value.upper()}] {event.subject}: {event.body}\n"
        )


class WebhookSink:
    """POSTs the event JSON; network errors surface as delivery failures only."""

    def __init__(self, url: str, timeout: float = 10.0, session=None):
        self.name = "webhook"
        self.url = url
        self.timeout = timeout
        self._session = session

    def emit(self, event: NotificationEvent) -> None:
        import requests

        session = self._session if self._session is not None else requests
        resp = session.post(
            self.url,
            data=event.to_json().encode("utf-8"),
            headers={"Content-Type": "application/json"},
            timeout=self.timeout,
        )
        if resp.status_code >= 400:
            raise RuntimeError(f"webhook returned {resp.status_code}")


class Notifier:
    """Fan-out dispatcher; keeps an in-memory journal so callers can assert
    on what was raised without re-reading the log file."""

    def __init__(self, sinks: list[Sink] | None = None):
        self.sinks: list[Sink] = list(sinks) if sinks else []
        self.journal: list[NotificationEvent] = []
        self._lock = threading.Lock()

    def notify(self, event: NotificationEvent) -> dict[str, bool]:
        """Deliver to every sink; returns per-sink success. Never raises."""
        with self._lock:
            self.journal.append(event)
        results: dict[str, bool] = {}
        for sink in self.sinks:
            try:
                sink.emit(event)
                results[sink.name] = True
            except Exception:
                results[sink.name] = False
        return results

    def events(self, severity: Severity | None = None) -> list[NotificationEvent]:
        with self._lock:
            if severity is None:
                return list(self.journal)
            return [e for e in self.journal if e.severity is severity]
