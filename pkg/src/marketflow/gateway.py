"""Query construction and execution against the market-data source.

Two interchangeable sources: a live HTTP adapter and a replay source that
resolves queries to fixture files by a deterministic naming scheme. All
live traffic flows through a shared sliding-window rate limiter.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path

import requests

from .model import Interval

SECONDS_PER_DAY = 86_400


class QueryKind(str, Enum):
    INTRADAY = "intraday"
    DAILY_HISTORY = "daily_history"
    BONDS = "bonds"
    COMMODITIES = "commodities"
    PROFILE = "profile"


# Path segment per query kind; {interval} is filled for intraday queries.
ENDPOINT_PATHS = {
    QueryKind.INTRADAY: "historical-chart/{interval}",
    QueryKind.DAILY_HISTORY: "historical-price-full",
    QueryKind.BONDS: "historical-bond-rates",
    QueryKind.COMMODITIES: "historical-commodities",
    QueryKind.PROFILE: "profile",
}

MAX_SYMBOLS_PER_QUERY = 5


@dataclass(frozen=True)
class DateRange:
    start: date
    end: date

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"range start {self.start} is after end {self.end}")


@dataclass(frozen=True)
class SourceQuery:
    """One request to the data source: what to fetch, for which symbols."""

    kind: QueryKind
    symbols: tuple[str, ...]
    range: DateRange | None = None
    interval: Interval = Interval.MIN15

    def __post_init__(self) -> None:
        if not 1 <= len(self.symbols) <= MAX_SYMBOLS_PER_QUERY:
            raise ValueError(
                f"queries take 1..{MAX_SYMBOLS_PER_QUERY} symbols, "
                f"got {len(self.symbols)}"
            )

    @property
    def joined_symbols(self) -> str:
        return ",".join(self.symbols)


@dataclass(frozen=True)
class RawPayload:
    """Raw response bytes plus enough context to reprocess them later."""

    query: SourceQuery
    body: bytes
    fetched_at: int
    status: int
    source_id: str


class TransportError(Exception):
    """Non-success transport outcome; retryable by the orchestrator."""

    def __init__(self, status: int, detail: str = ""):
        self.status = status
        self.detail = detail
        super().__init__(f"transport error {status}: {detail}")


class FixtureMissing(Exception):
    """Replay source has no fixture for the query; retryable signal."""


class DailyCapExhausted(Exception):
    """The per-UTC-day call budget is spent."""


@dataclass(frozen=True)
class Grant:
    ready_at: float


class RateLimiter:
    """Sliding-window limiter: at most `capacity` grants in any 60 s span
    (half-open [t, t+60)) and at most `daily_cap` grants per UTC day.

    Callers pass their own clock reading; the limiter never sleeps, it
    answers with the earliest admissible time. Grants are totally ordered
    under an internal lock, so concurrent callers are safe.
    """

    def __init__(self, capacity: int = 300, window: float = 60.0, daily_cap: int = 432_000):
        self.capacity = capacity
        self.window = window
        self.daily_cap = daily_cap
        self._recent: deque[float] = deque(maxlen=capacity)
        self._day_counts: dict[int, int] = {}
        self._lock = threading.Lock()

    def acquire(self, now: float) -> Grant:
        """Reserve one permit; returns the earliest time the call may start.

        Raises DailyCapExhausted when the UTC day of the would-be grant has
        no budget left.
        """
        with self._lock:
            ready = now
            if self._recent:
                ready = max(ready, self._recent[-1])  # keep the log ordered
                if len(self._recent) == self.capacity:
                    ready = max(ready, self._recent[0] + self.window)
            day = int(ready // SECONDS_PER_DAY)
            if self._day_counts.get(day, 0) >= self.daily_cap:
                raise DailyCapExhausted(f"daily cap {self.daily_cap} reached for day {day}")
            self._day_counts[day] = self._day_counts.get(day, 0) + 1
            self._recent.append(ready)
            return Grant(ready_at=ready)

    def granted_on_day(self, day: int) -> int:
        with self._lock:
            return self._day_counts.get(day, 0)


def build_url(base: str, q: SourceQuery, api_key: str) -> str:
    """Deterministic source URL for a validated query.

    Layout: {base}/{kind path}/{symbols joined by ','}?apikey=K[&from=F&to=T].
    Distinct valid queries always map to distinct URLs.
    """
    path = ENDPOINT_PATHS[q.kind].format(interval=q.interval.value)
    url = f"{base.rstrip('/')}/{path}/{q.joined_symbols}?apikey={api_key}"
    if q.range is not None:
        url += f"&from={q.range.start.isoformat()}&to={q.range.end.isoformat()}"
    return url


def fixture_name(q: SourceQuery) -> str:
    """Fixture filename for a query: {kind}_{symbols joined by '-'}_{from}_{to}.json,
    with `full` in place of an absent range."""
    symbols = "-".join(q.symbols)
    if q.range is None:
        span = "full"
    else:
        span = f"{q.range.start.isoformat()}_{q.range.end.isoformat()}"
    return f"{q.kind.value}_{symbols}_{span}.json"


class ReplaySource:
    """Bit-identical offline source backed by a fixture directory."""

    source_id = "replay"

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def execute(self, q: SourceQuery, now: float | None = None) -> RawPayload:
        path = self.fixture_dir / fixture_name(q)
        if not path.is_file():
            raise FixtureMissing(str(path))
        body = path.read_bytes()
        fetched_at = int(now) if now is not None else 0
        return RawPayload(
            query=q, body=body, fetched_at=fetched_at, status=200, source_id=self.source_id
        )


class LiveSource:
    """HTTP adapter; one GET per query, 30 s timeout, no internal retries.

    Retry policy lives in the orchestrator so failures are handled once,
    centrally.
    """

    source_id = "live"

    def __init__(self, base_url: str, api_key: str, timeout: float = 30.0, session=None):
        self.base_url = base_url
        self.api_key = api_key
        self.timeout = timeout
        self._session = session or requests.Session()

    def execute(self, q: SourceQuery, now: float | None = None) -> RawPayload:
        import time as _time

        url = build_url(self.base_url, q, self.api_key)
        try:
            resp = self._session.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(0, str(exc)) from exc
        fetched_at = int(now if now is not None else _time.time())
        if resp.status_code != 200:
            raise TransportError(resp.status_code, resp.text[:200])
        return RawPayload(
            query=q,
            body=resp.content,
            fetched_at=fetched_at,
            status=resp.status_code,
            source_id=self.source_id,
        )
