"""Star-schema warehouse fed from the staging store via declarative load plans.

Plan stages: SDE copies source rows into the warehouse staging area, SIL
loads staging into the price fact table (conflict-ignored, rejecting rows
whose dimensions do not resolve), PLP pre-aggregates 15-minute facts into
daily facts. Dimensions are type-1: attribute changes overwrite in place,
surrogate ids never move.
"""

from __future__ import annotations

import sqlite3
import time as _time
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping

from .model import (
    Instrument,
    InstrumentKind,
    Interval,
    OhlcvBar,
    SeriesKey,
    TradingCalendar,
    daily_bar_ts,
)
from .store import CSV_HEADER, BarStore, SinkError, StorageError, format_bar_csv_row


class PlanType(str, Enum):
    SDE = "SDE"
    SIL = "SIL"
    PLP = "PLP"


class UnknownPlan(Exception):
    """No load plan with the requested name is configured."""


class UnresolvedSource(Exception):
    """The plan names a source instance that is not bound."""


class EmptySession(Exception):
    """Daily aggregation was asked to fold zero bars."""


class MixedSessions(Exception):
    """Bars handed to one aggregation span more than one session."""


@dataclass(frozen=True)
class LoadPlan:
    """Declarative staging-to-warehouse transformation unit."""

    name: str
    plan_type: PlanType
    source_instance: str
    scope: frozenset[SeriesKey]
    range: tuple[date, date]
    description: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("plan name must be non-empty")
        if not self.scope:
            raise ValueError("plan scope must be non-empty")
        if self.range[0] > self.range[1]:
            raise ValueError("plan range start after end")


@dataclass(frozen=True)
class DimStats:
    created_instruments: int
    updated_instruments: int
    created_dates: int


@dataclass(frozen=True)
class LoadReport:
    """Counts reconcile as rows_read = rows_loaded + rows_rejected + rows_ignored;
    re-running a plan moves everything into rows_ignored."""

    plan: str
    rows_read: int
    rows_loaded: int
    rows_rejected: int
    rows_ignored: int
    duration_s: float


@dataclass(frozen=True)
class FactRow:
    symbol: str
    interval: Interval
    ts: int
    open: int
    high: int
    low: int
    close: int
    volume: int
    instrument_id: int
    date_id: int

    def bar(self) -> OhlcvBar:
        return OhlcvBar(
            ts=self.ts, open=self.open, high=self.high,
            low=self.low, close=self.close, volume=self.volume,
        )


def aggregate_daily(
    bars: list[OhlcvBar], key: SeriesKey, cal: TradingCalendar
) -> OhlcvBar:
    """Fold one session of ascending 15-min bars into a daily bar.

    open/close come from the first/last bar, high/low are the extremes,
    volume is the sum; the daily timestamp is the session date at 00:00 UTC.
    Session identity is the exchange-local date of each bar.
    """
    if not bars:
        raise EmptySession(str(key))
    sessions = {cal.local_date(b.ts) for b in bars}
    if len(sessions) != 1:
        raise MixedSessions(f"{key}: {sorted(sessions)}")
    session = sessions.pop()
    return OhlcvBar(
        ts=daily_bar_ts(session),
        open=bars[0].open,
        high=max(b.high for b in bars),
        low=min(b.low for b in bars),
        close=bars[-1].close,
        volume=sum(b.volume for b in bars),
    )


def date_id_of(day: date) -> int:
    return day.year * 10_000 + day.month * 100 + day.day


_WAREHOUSE_DDL = (
    """
    CREATE TABLE IF NOT EXISTS dim_instrument (
        instrument_id INTEGER PRIMARY KEY AUTOINCREMENT,
        symbol   TEXT NOT NULL UNIQUE,
        name     TEXT NOT NULL DEFAULT '',
        sector   TEXT NOT NULL DEFAULT '',
        industry TEXT NOT NULL DEFAULT '',
        kind     TEXT NOT NULL
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS dim_date (
        date_id        INTEGER PRIMARY KEY,
        calendar_date  TEXT NOT NULL,
        is_trading_day INTEGER NOT NULL,
        year           INTEGER NOT NULL,
        month          INTEGER NOT NULL,
        day            INTEGER NOT NULL,
        weekday        INTEGER NOT NULL
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS staging_price (
        symbol   TEXT NOT NULL,
        interval TEXT NOT NULL,
        ts       INTEGER NOT NULL,
        open     INTEGER NOT NULL,
        high     INTEGER NOT NULL,
        low      INTEGER NOT NULL,
        close    INTEGER NOT NULL,
        volume   INTEGER NOT NULL,
        PRIMARY KEY (symbol, interval, ts)
    )
    """,
    """
    CREATE TABLE IF NOT EXISTS fact_price (
        instrument_id INTEGER NOT NULL REFERENCES dim_instrument(instrument_id),
        date_id       INTEGER NOT NULL REFERENCES dim_date(date_id),
        interval      TEXT NOT NULL,
        ts            INTEGER NOT NULL,
        open          INTEGER NOT NULL,
        high          INTEGER NOT NULL,
        low           INTEGER NOT NULL,
        close         INTEGER NOT NULL,
        volume        INTEGER NOT NULL,
        PRIMARY KEY (instrument_id, interval, ts)
    )
    """,
)


class Warehouse:
    """Sqlite-backed star schema; one exclusive writer at a time."""

    def __init__(self, path: str | Path, cal: TradingCalendar):
        self.path = str(path)
        self.cal = cal
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False)
            with self._conn:
                for ddl in _WAREHOUSE_DDL:
                    self._conn.execute(ddl)
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc

    def close(self) -> None:
        self._conn.close()

    # -- dimensions ---------------------------------------------------------

    def upsert_dimensions(
        self, instruments: Iterable[Instrument], dates: tuple[date, date]
    ) -> DimStats:
        """Ensure one instrument row per symbol (type-1 overwrite) and one
        date row per calendar day in the inclusive range."""
        created_i = updated_i = created_d = 0
        try:
            with self._conn:
                for inst in instruments:
                    row = self._conn.execute(
                        "SELECT instrument_id, name, sector, industry, kind "
                        "FROM dim_instrument WHERE symbol=?",
                        (inst.symbol,),
                    ).fetchone()
                    if row is None:
                        self._conn.execute(
                            "INSERT INTO dim_instrument (symbol, name, sector, industry, kind) "
                            "VALUES (?,?,?,?,?)",
                            (inst.symbol, inst.name, inst.sector, inst.industry, inst.kind.value),
                        )
                        created_i += 1
                    elif row[1:] != (inst.name, inst.sector, inst.industry, inst.kind.value):
                        self._conn.execute(
                            "UPDATE dim_instrument SET name=?, sector=?, industry=?, kind=? "
                            "WHERE instrument_id=?",
                            (inst.name, inst.sector, inst.industry, inst.kind.value, row[0]),
                        )
                        updated_i += 1
                start, end = dates
                d = start
                while d <= end:
                    cur = self._conn.execute(
                        "INSERT OR IGNORE INTO dim_date VALUES (?,?,?,?,?,?,?)",
                        (
                            date_id_of(d),
                            d.isoformat(),
                            1 if self.cal.is_trading_day(d) else 0,
                            d.year,
                            d.month,
                            d.day,
                            d.weekday(),
                        ),
                    )
                    created_d += cur.rowcount
                    d += timedelta(days=1)
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return DimStats(
            created_instruments=created_i,
            updated_instruments=updated_i,
            created_dates=created_d,
        )

    def instrument_id(self, symbol: str) -> int | None:
        row = self._conn.execute(
            "SELECT instrument_id FROM dim_instrument WHERE symbol=?", (symbol,)
        ).fetchone()
        return row[0] if row else None

    # -- load plans ---------------------------------------------------------

    def run_load_plan(
        self, plan: LoadPlan, sources: Mapping[str, BarStore] | None = None
    ) -> LoadReport:
        """Execute one plan stage; re-running converges (idempotence)."""
        started = _time.monotonic()
        if plan.plan_type is PlanType.SDE:
            if sources is None or plan.source_instance not in (sources or {}):
                raise UnresolvedSource(plan.source_instance)
            read, loaded, rejected, ignored = self._run_sde(plan, sources[plan.source_instance])
        elif plan.plan_type is PlanType.SIL:
            read, loaded, rejected, ignored = self._run_sil(plan)
        else:
            read, loaded, rejected, ignored = self._run_plp(plan)
        return LoadReport(
            plan=plan.name,
            rows_read=read,
            rows_loaded=loaded,
            rows_rejected=rejected,
            rows_ignored=ignored,
            duration_s=_time.monotonic() - started,
        )

    def _ts_bounds(self, plan: LoadPlan) -> tuple[int, int]:
        start, end = plan.range
        lo = int(datetime.combine(start, datetime.min.time(), tzinfo=timezone.utc).timestamp())
        hi = int(datetime.combine(end, datetime.max.time(), tzinfo=timezone.utc).timestamp())
        return lo, hi

    def _run_sde(self, plan: LoadPlan, source: BarStore) -> tuple[int, int, int, int]:
        lo, hi = self._ts_bounds(plan)
        read = loaded = ignored = 0
        try:
            with self._conn:
                for key in sorted(plan.scope, key=str):
                    for bar in source.read_series(key, (lo, hi)):
                        read += 1
                        cur = self._conn.execute(
                            "INSERT OR IGNORE INTO staging_price VALUES (?,?,?,?,?,?,?,?)",
                            (
                                key.symbol, key.interval.value, bar.ts,
                                bar.open, bar.high, bar.low, bar.close, bar.volume,
                            ),
                        )
                        if cur.rowcount:
                            loaded += 1
                        else:
                            ignored += 1
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return read, loaded, 0, ignored

    def _run_sil(self, plan: LoadPlan) -> tuple[int, int, int, int]:
        lo, hi = self._ts_bounds(plan)
        read = loaded = rejected = ignored = 0
        try:
            with self._conn:
                for key in sorted(plan.scope, key=str):
                    inst_id = self.instrument_id(key.symbol)
                    rows = self._conn.execute(
                        "SELECT ts, open, high, low, close, volume FROM staging_price "
                        "WHERE symbol=? AND interval=? AND ts BETWEEN ? AND ? ORDER BY ts",
                        (key.symbol, key.interval.value, lo, hi),
                    ).fetchall()
                    for ts, o, h, l, c, v in rows:
                        read += 1
                        if inst_id is None:
                            rejected += 1
                            continue
                        did = date_id_of(datetime.fromtimestamp(ts, tz=timezone.utc).date())
                        if not self._date_exists(did):
                            rejected += 1
                            continue
                        cur = self._conn.execute(
                            "INSERT OR IGNORE INTO fact_price VALUES (?,?,?,?,?,?,?,?,?)",
                            (inst_id, did, key.interval.value, ts, o, h, l, c, v),
                        )
                        if cur.rowcount:
                            loaded += 1
                        else:
                            ignored += 1
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return read, loaded, rejected, ignored

    def _run_plp(self, plan: LoadPlan) -> tuple[int, int, int, int]:
        """Aggregate 15-min facts into daily facts; rows_read counts sessions."""
        read = loaded = ignored = 0
        try:
            with self._conn:
                for key in sorted(plan.scope, key=str):
                    if key.interval is not Interval.MIN15:
                        continue
                    inst_id = self.instrument_id(key.symbol)
                    if inst_id is None:
                        continue
                    for session, bars in self._sessions_for(key, inst_id, plan):
                        read += 1
                        daily = aggregate_daily(bars, key, self.cal)
                        did = date_id_of(session)
                        cur = self._conn.execute(
                            "INSERT OR IGNORE INTO fact_price VALUES (?,?,?,?,?,?,?,?,?)",
                            (
                                inst_id, did, Interval.DAILY.value, daily.ts,
                                daily.open, daily.high, daily.low, daily.close, daily.volume,
                            ),
                        )
                        if cur.rowcount:
                            loaded += 1
                        else:
                            ignored += 1
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return read, loaded, 0, ignored

    def _sessions_for(self, key: SeriesKey, inst_id: int, plan: LoadPlan):
        lo, hi = self._ts_bounds(plan)
        rows = self._conn.execute(
            "SELECT ts, open, high, low, close, volume FROM fact_price "
            "WHERE instrument_id=? AND interval=? AND ts BETWEEN ? AND ? ORDER BY ts",
            (inst_id, Interval.MIN15.value, lo, hi),
        ).fetchall()
        by_session: dict[date, list[OhlcvBar]] = {}
        for ts, o, h, l, c, v in rows:
            by_session.setdefault(self.cal.local_date(ts), []).append(
                OhlcvBar(ts=ts, open=o, high=h, low=l, close=c, volume=v)
            )
        return sorted(by_session.items())

    def _date_exists(self, date_id: int) -> bool:
        return (
            self._conn.execute(
                "SELECT 1 FROM dim_date WHERE date_id=?", (date_id,)
            ).fetchone()
            is not None
        )

    # -- read paths ---------------------------------------------------------

    def query_facts(
        self,
        symbols: Iterable[str] | None = None,
        interval: Interval | None = None,
        ts_range: tuple[int, int] | None = None,
    ) -> list[FactRow]:
        sql = (
            "SELECT i.symbol, f.interval, f.ts, f.open, f.high, f.low, f.close, "
            "f.volume, f.instrument_id, f.date_id "
            "FROM fact_price f JOIN dim_instrument i USING (instrument_id)"
        )
        clauses, params = [], []
        if symbols is not None:
            wanted = list(symbols)
            clauses.append(f"i.symbol IN ({','.join('?' * len(wanted))})")
            params.extend(wanted)
        if interval is not None:
            clauses.append("f.interval=?")
            params.append(interval.value)
        if ts_range is not None:
            clauses.append("f.ts BETWEEN ? AND ?")
            params.extend(ts_range)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY i.symbol, f.ts"
        try:
            rows = self._conn.execute(sql, params).fetchall()
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        return [
            FactRow(
                symbol=r[0], interval=Interval(r[1]), ts=r[2], open=r[3], high=r[4],
                low=r[5], close=r[6], volume=r[7], instrument_id=r[8], date_id=r[9],
            )
            for r in rows
        ]

    def count_facts(self, interval: Interval | None = None) -> int:
        if interval is None:
            return self._conn.execute("SELECT COUNT(*) FROM fact_price").fetchone()[0]
        return self._conn.execute(
            "SELECT COUNT(*) FROM fact_price WHERE interval=?", (interval.value,)
        ).fetchone()[0]

    def count_staging(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM staging_price").fetchone()[0]

    def unresolved_fact_keys(self) -> int:
        """Full referential-integrity scan; 0 means every fact resolves."""
        return self._conn.execute(
            "SELECT COUNT(*) FROM fact_price f "
            "LEFT JOIN dim_instrument i USING (instrument_id) "
            "LEFT JOIN dim_date d USING (date_id) "
            "WHERE i.instrument_id IS NULL OR d.date_id IS NULL"
        ).fetchone()[0]

    def export_facts(self, rows: list[FactRow], sink: IO[bytes]) -> int:
        """Multi-symbol CSV extract: staging CSV format plus a leading Symbol column."""
        written = 0
        try:
            written += sink.write(f"Symbol,{CSV_HEADER}\n".encode("ascii"))
            for row in rows:
                written += sink.write(
                    f"{row.symbol},{format_bar_csv_row(row.bar())}\n".encode("ascii")
                )
        except OSError as exc:
            raise SinkError(str(exc)) from exc
        return written


def resolve_plan(name: str, plans: Mapping[str, LoadPlan]) -> LoadPlan:
    try:
        return plans[name]
    except KeyError:
        raise UnknownPlan(name) from None
