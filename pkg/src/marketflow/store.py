"""Idempotent OLTP staging store for conformed series data.

One logical table keyed by (symbol, interval, ts) replaces per-symbol
tables; conflicts are counted, never raised (ignore-on-conflict), and a
batch is visible atomically or not at all. Two bindings: in-memory for
tests, sqlite for durable storage. Bond rates and company profiles get
their own keyed tables with the same conflict semantics.
"""

from __future__ import annotations

import sqlite3
import threading
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import IO, Iterable

from .model import (
    BondRate,
    CompanyProfile,
    InstrumentKind,
    Interval,
    OhlcvBar,
    SeriesKey,
    ValidatedBar,
    format_fixed,
)

CSV_HEADER = "Date,Open,High,Low,Close,Volume"


class StorageError(Exception):
    """Underlying storage failed (I/O, corruption)."""


class SinkError(Exception):
    """The export destination refused the write."""


@dataclass(frozen=True)
class UpsertStats:
    inserted: int
    ignored: int

    @property
    def total(self) -> int:
        return self.inserted + self.ignored


@dataclass(frozen=True)
class SeriesExtent:
    key: SeriesKey
    min_ts: int | None
    max_ts: int | None
    count: int


@dataclass(frozen=True)
class ExportStats:
    rows: int
    bytes: int


def format_bar_csv_row(bar: OhlcvBar) -> str:
    """One CSV data row, bit-exact: ISO-8601 UTC, trimmed scale-4 prices."""
    ts = datetime.fromtimestamp(bar.ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return (
        f"{ts},{format_fixed(bar.open)},{format_fixed(bar.high)},"
        f"{format_fixed(bar.low)},{format_fixed(bar.close)},{bar.volume}"
    )


def export_filename(symbol: str, kind: InstrumentKind, start: date, end: date) -> str:
    return f"{symbol}-{kind.value.upper()}S_{start.isoformat()}_{end.isoformat()}.csv"


class MemoryBarStore:
    """Dict-backed binding; state lives only as long as the process."""

    binding = "memory"

    def __init__(self):
        self._series: dict[SeriesKey, dict[int, OhlcvBar]] = {}
        self._bonds: dict[tuple[str, str, date], BondRate] = {}
        self._profiles: dict[tuple[str, date], CompanyProfile] = {}
        self._lock = threading.Lock()

    def upsert_bars(self, key: SeriesKey, bars: Iterable[ValidatedBar]) -> UpsertStats:
        with self._lock:
            table = self._series.setdefault(key, {})
            inserted = ignored = 0
            for bar in bars:
                if bar.ts in table:
                    ignored += 1
                else:
                    table[bar.ts] = bar
                    inserted += 1
            return UpsertStats(inserted=inserted, ignored=ignored)

    def read_series(self, key: SeriesKey, ts_range: tuple[int, int]) -> list[OhlcvBar]:
        lo, hi = ts_range
        if lo > hi:
            raise ValueError(f"range start {lo} after end {hi}")
        with self._lock:
            table = self._series.get(key, {})
            return [table[ts] for ts in sorted(table) if lo <= ts <= hi]

    def series_extent(self, key: SeriesKey) -> SeriesExtent:
        with self._lock:
            table = self._series.get(key, {})
            if not table:
                return SeriesExtent(key=key, min_ts=None, max_ts=None, count=0)
            return SeriesExtent(
                key=key, min_ts=min(table), max_ts=max(table), count=len(table)
            )

    def upsert_bond_rates(self, rates: Iterable[BondRate]) -> UpsertStats:
        with self._lock:
            inserted = ignored = 0
            for r in rates:
                k = (r.country, r.duration, r.date)
                if k in self._bonds:
                    ignored += 1
                else:
                    self._bonds[k] = r
                    inserted += 1
            return UpsertStats(inserted=inserted, ignored=ignored)

    def upsert_profiles(self, profiles: Iterable[CompanyProfile]) -> UpsertStats:
        with self._lock:
            inserted = ignored = 0
            for p in profiles:
                k = (p.symbol, p.as_of)
                if k in self._profiles:
                    ignored += 1
                else:
                    self._profiles[k] = p
                    inserted += 1
            return UpsertStats(inserted=inserted, ignored=ignored)

    def count_bond_rates(self) -> int:
        with self._lock:
            return len(self._bonds)

    def count_profiles(self) -> int:
        with self._lock:
            return len(self._profiles)

    def list_series(self) -> list[SeriesKey]:
        with self._lock:
            return sorted(self._series, key=str)

    def close(self) -> None:
        pass


_BARS_DDL = """
CREATE TABLE IF NOT EXISTS bars (
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
"""

_BONDS_DDL = """
CREATE TABLE IF NOT EXISTS bond_rates (
    country  TEXT NOT NULL,
    duration TEXT NOT NULL,
    currency TEXT NOT NULL,
    date     TEXT NOT NULL,
    rate     INTEGER NOT NULL,
    PRIMARY KEY (country, duration, date)
)
"""

_PROFILES_DDL = """
CREATE TABLE IF NOT EXISTS company_profiles (
    symbol   TEXT NOT NULL,
    as_of    TEXT NOT NULL,
    price    INTEGER NOT NULL,
    beta     INTEGER NOT NULL,
    vol_avg  INTEGER NOT NULL,
    mkt_cap  INTEGER NOT NULL,
    last_div INTEGER NOT NULL,
    currency TEXT NOT NULL DEFAULT '',
    exchange TEXT NOT NULL DEFAULT '',
    industry TEXT NOT NULL DEFAULT '',
    ceo      TEXT NOT NULL DEFAULT '',
    sector   TEXT NOT NULL DEFAULT '',
    PRIMARY KEY (symbol, as_of)
)
"""


class SqliteBarStore:
    """Durable embedded binding. Writes are serialized under one lock;
    a batch commits atomically via a single transaction."""

    binding = "sqlite"

    def __init__(self, path: str | Path):
        self.path = str(path)
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False)
            with self._conn:
                self._conn.execute(_BARS_DDL)
                self._conn.execute(_BONDS_DDL)
                self._conn.execute(_PROFILES_DDL)
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        self._lock = threading.Lock()

    def upsert_bars(self, key: SeriesKey, bars: Iterable[ValidatedBar]) -> UpsertStats:
        rows = [
            (key.symbol, key.interval.value, b.ts, b.open, b.high, b.low, b.close, b.volume)
            for b in bars
        ]
        with self._lock:
            try:
                before = self._conn.total_changes
                with self._conn:
                    self._conn.executemany(
                        "INSERT OR IGNORE INTO bars VALUES (?,?,?,?,?,?,?,?)", rows
                    )
                inserted = self._conn.total_changes - before
            except sqlite3.Error as exc:
                raise StorageError(str(exc)) from exc
        return UpsertStats(inserted=inserted, ignored=len(rows) - inserted)

    def read_series(self, key: SeriesKey, ts_range: tuple[int, int]) -> list[OhlcvBar]:
        lo, hi = ts_range
        if lo > hi:
            raise ValueError(f"range start {lo} after end {hi}")
        try:
            cur = self._conn.execute(
                "SELECT ts, open, high, low, close, volume FROM bars "
                "WHERE symbol=? AND interval=? AND ts BETWEEN ? AND ? ORDER BY ts",
                (key.symbol, key.interval.value, lo, hi),
            )
            return [OhlcvBar(*row) for row in cur.fetchall()]
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc

    def series_extent(self, key: SeriesKey) -> SeriesExtent:
        try:
            cur = self._conn.execute(
                "SELECT MIN(ts), MAX(ts), COUNT(*) FROM bars WHERE symbol=? AND interval=?",
                (key.symbol, key.interval.value),
            )
            lo, hi, count = cur.fetchone()
        except sqlite3.Error as exc:
            raise StorageError(str(exc)) from exc
        if count == 0:
            return SeriesExtent(key=key, min_ts=None, max_ts=None, count=0)
        return SeriesExtent(key=key, min_ts=lo, max_ts=hi, count=count)

    def upsert_bond_rates(self, rates: Iterable[BondRate]) -> UpsertStats:
        rows = [
            (r.country, r.duration, r.currency, r.date.isoformat(), r.rate) for r in rates
        ]
        with self._lock:
            try:
                before = self._conn.total_changes
                with self._conn:
                    self._conn.executemany(
                        "INSERT OR IGNORE INTO bond_rates VALUES (?,?,?,?,?)", rows
                    )
                inserted = self._conn.total_changes - before
            except sqlite3.Error as exc:
                raise StorageError(str(exc)) from exc
        return UpsertStats(inserted=inserted, ignored=len(rows) - inserted)

    def upsert_profiles(self, profiles: Iterable[CompanyProfile]) -> UpsertStats:
        rows = [
            (
                p.symbol, p.as_of.isoformat(), p.price, p.beta, p.vol_avg, p.mkt_cap,
                p.last_div, p.currency, p.exchange, p.industry, p.ceo, p.sector,
            )
            for p in profiles
        ]
        with self._lock:
            try:
                before = self._conn.total_changes
                with self._conn:
                    self._conn.executemany(
                        "INSERT OR IGNORE INTO company_profiles VALUES (?,?,?,?,?,?,?,?,?,?,?,?)",
                        rows,
                    )
                inserted = self._conn.total_changes - before
            except sqlite3.Error as exc:
                raise StorageError(str(exc)) from exc
        return UpsertStats(inserted=inserted, ignored=len(rows) - inserted)

    def count_bond_rates(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM bond_rates").fetchone()[0]

    def count_profiles(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM company_profiles").fetchone()[0]

    def list_series(self) -> list[SeriesKey]:
        cur = self._conn.execute("SELECT DISTINCT symbol, interval FROM bars ORDER BY symbol")
        return [SeriesKey(sym, Interval(iv)) for sym, iv in cur.fetchall()]

    def close(self) -> None:
        self._conn.close()


BarStore = MemoryBarStore | SqliteBarStore


def open_store(binding: str, path: str | Path | None = None) -> BarStore:
    if binding == "memory":
        return MemoryBarStore()
    if binding == "sqlite":
        if path is None:
            raise ValueError("sqlite binding requires a path")
        return SqliteBarStore(path)
    raise ValueError(f"unknown store binding {binding!r}")


def export_flat(
    store: BarStore, key: SeriesKey, ts_range: tuple[int, int], sink: IO[bytes]
) -> ExportStats:
    """Write a series as CSV to a byte sink, returning exact row/byte counts."""
    bars = store.read_series(key, ts_range)
    written = 0
    try:
        written += sink.write((CSV_HEADER + "\n").encode("ascii"))
        for bar in bars:
            written += sink.write((format_bar_csv_row(bar) + "\n").encode("ascii"))
    except OSError as exc:
        raise SinkError(str(exc)) from exc
    return ExportStats(rows=len(bars), bytes=written)


def import_flat(lines: Iterable[str]) -> list[dict]:
    """Parse exported CSV back into raw rows suitable for conforming."""
    rows = []
    for i, line in enumerate(lines):
        line = line.rstrip("\n")
        if not line:
            continue
        if i == 0:
            if line != CSV_HEADER:
                raise ValueError(f"unexpected CSV header {line!r}")
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"expected 6 CSV fields, got {len(parts)}: {line!r}")
        rows.append(
            {
                "date": parts[0],
                "open": parts[1],
                "high": parts[2],
                "low": parts[3],
                "close": parts[4],
                "volume": parts[5],
            }
        )
    return rows
