"""Conforming raw payloads into typed rows.

Every parsed row ends up in exactly one place: a conformed value or a
quarantine record carrying the violated rule. Nothing is dropped silently.
Timestamps in source rows are exchange-local wall clock unless they carry
an explicit UTC offset; prices convert to scale-4 fixed point with
round-half-even.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, timezone

from .gateway import QueryKind, RawPayload, SourceQuery
from .model import (
    BondRate,
    CompanyProfile,
    Instrument,
    Interval,
    OhlcvBar,
    RuleViolation,
    SeriesKey,
    TradingCalendar,
    ValidatedBar,
    daily_bar_ts,
    session_slots,
    to_fixed,
    trading_days,
    validate_bar,
)

BAR_FIELDS = ("date", "open", "high", "low", "close", "volume")
BOND_FIELDS = ("country", "duration", "currency", "date", "rate")
PROFILE_FIELDS = ("symbol", "date", "price", "beta", "volAvg", "mktCap", "lastDiv")


class ParseError(Exception):
    """Payload body is not a well-formed JSON array of objects."""

    def __init__(self, offset: int, detail: str):
        self.offset = offset
        self.detail = detail
        super().__init__(f"parse error at byte {offset}: {detail}")


class EmptyPayload(Exception):
    """The source answered with an empty array — a signal, not a failure."""


@dataclass(frozen=True)
class QuarantineRecord:
    """A rejected row, retained verbatim with the rule that rejected it."""

    raw_row: str
    rule: str
    series_key: SeriesKey
    observed_at: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "raw_row": self.raw_row,
                "rule": self.rule,
                "symbol": self.series_key.symbol,
                "interval": self.series_key.interval.value,
                "observed_at": self.observed_at,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class GapReport:
    """Expected-but-missing slots for one series over a scanned range."""

    series_key: SeriesKey
    missing: tuple[int, ...]
    scanned_range: tuple[date, date]
    expected_count: int
    present_count: int

    def as_dict(self) -> dict:
        return {
            "symbol": self.series_key.symbol,
            "interval": self.series_key.interval.value,
            "missing": list(self.missing),
            "scanned_from": self.scanned_range[0].isoformat(),
            "scanned_to": self.scanned_range[1].isoformat(),
            "expected_count": self.expected_count,
            "present_count": self.present_count,
        }


def parse_payload(p: RawPayload) -> list[dict]:
    """Decode the payload body into raw rows, preserving source order.

    The body must be a JSON array of objects. An empty array raises
    EmptyPayload; malformed JSON raises ParseError with the byte offset.
    """
    try:
        decoded = json.loads(p.body.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(exc.start, "body is not valid UTF-8") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.pos, exc.msg) from exc
    if not isinstance(decoded, list):
        raise ParseError(0, f"expected a JSON array, got {type(decoded).__name__}")
    if not decoded:
        raise EmptyPayload(f"empty payload for {p.query.kind.value}")
    for i, row in enumerate(decoded):
        if not isinstance(row, dict):
            raise ParseError(0, f"array element {i} is not an object")
    return decoded


def parse_source_timestamp(text: str, cal: TradingCalendar) -> int:
    """UTC epoch seconds for a source date string.

    Strings with an explicit offset ('...Z' / '+HH:MM') are taken as-is;
    bare 'YYYY-MM-DD HH:MM:SS' is exchange-local wall clock; bare
    'YYYY-MM-DD' marks a daily bar at 00:00 UTC.
    """
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"unparseable date {text!r}") from exc
    if dt.tzinfo is not None:
        return int(dt.timestamp())
    if dt.hour == 0 and dt.minute == 0 and dt.second == 0 and len(raw) <= 10:
        return daily_bar_ts(dt.date())
    return int(dt.replace(tzinfo=cal.zone).timestamp())


@dataclass
class ConformResult:
    """Outcome of conforming one payload, grouped by series."""

    bars: dict[SeriesKey, list[ValidatedBar]] = field(default_factory=dict)
    bonds: list[BondRate] = field(default_factory=list)
    profiles: list[CompanyProfile] = field(default_factory=list)
    quarantined: list[QuarantineRecord] = field(default_factory=list)
    off_session: list[tuple[SeriesKey, int]] = field(default_factory=list)

    @property
    def conformed_count(self) -> int:
        return (
            sum(len(v) for v in self.bars.values())
            + len(self.bonds)
            + len(self.profiles)
        )


def _quarantine(row: dict, rule: str, key: SeriesKey, observed_at: int) -> QuarantineRecord:
    return QuarantineRecord(
        raw_row=json.dumps(row, sort_keys=True, default=str),
        rule=rule,
        series_key=key,
        observed_at=observed_at,
    )


def conform_bar_row(
    row: dict,
    inst: Instrument,
    cal: TradingCalendar,
    interval: Interval,
    observed_at: int = 0,
) -> ValidatedBar | QuarantineRecord:
    """Conform one raw OHLCV row; all failures become quarantine records."""
    key = SeriesKey(inst.symbol, interval)
    for name in BAR_FIELDS:
        if name not in row:
            return _quarantine(row, f"missing_field:{name}", key, observed_at)
    try:
        ts = parse_source_timestamp(str(row["date"]), cal)
    except ValueError:
        return _quarantine(row, "bad_date", key, observed_at)
    prices = {}
    for name in ("open", "high", "low", "close"):
        try:
            prices[name] = to_fixed(row[name])
        except ValueError:
            return _quarantine(row, f"bad_number:{name}", key, observed_at)
    try:
        volume = to_fixed(row["volume"], scale=0)
    except ValueError:
        return _quarantine(row, "bad_number:volume", key, observed_at)
    bar = OhlcvBar(ts=ts, volume=volume, **prices)
    try:
        return validate_bar(bar, inst.kind)
    except RuleViolation as exc:
        return _quarantine(row, exc.rule, key, observed_at)


def is_off_session(ts: int, cal: TradingCalendar, interval: Interval) -> bool:
    """True when a timestamp falls outside the expected slot grid."""
    if interval is Interval.DAILY:
        return not cal.is_trading_day(datetime.fromtimestamp(ts, tz=timezone.utc).date())
    return ts not in session_slots(cal, cal.local_date(ts))


def conform_bond_row(row: dict, observed_at: int = 0, tag: SeriesKey | None = None):
    """Conform one bond-rate row to a BondRate or a quarantine record."""
    key = tag or SeriesKey("BOND", Interval.DAILY)
    for name in BOND_FIELDS:
        if name not in row:
            return _quarantine(row, f"missing_field:{name}", key, observed_at)
    try:
        day = date.fromisoformat(str(row["date"]).strip()[:10])
    except ValueError:
        return _quarantine(row, "bad_date", key, observed_at)
    try:
        rate = to_fixed(row["rate"])
    except ValueError:
        return _quarantine(row, "bad_number:rate", key, observed_at)
    try:
        return BondRate(
            country=str(row["country"]),
            duration=str(row["duration"]),
            currency=str(row["currency"]),
            date=day,
            rate=rate,
        )
    except ValueError as exc:
        return _quarantine(row, str(exc), key, observed_at)


def conform_profile_row(row: dict, observed_at: int = 0, tag: SeriesKey | None = None):
    """Conform one company-statement row to a CompanyProfile or quarantine."""
    key = tag or SeriesKey("PROFILE", Interval.DAILY)
    for name in PROFILE_FIELDS:
        if name not in row:
            return _quarantine(row, f"missing_field:{name}", key, observed_at)
    try:
        as_of = date.fromisoformat(str(row["date"]).strip()[:10])
    except ValueError:
        return _quarantine(row, "bad_date", key, observed_at)
    try:
        numbers = {
            "price": to_fixed(row["price"]),
            "beta": to_fixed(row["beta"]),
            "vol_avg": to_fixed(row["volAvg"], scale=0),
            "mkt_cap": to_fixed(row["mktCap"], scale=0),
            "last_div": to_fixed(row["lastDiv"]),
        }
    except ValueError:
        return _quarantine(row, "bad_number", key, observed_at)
    try:
        return CompanyProfile(
            symbol=str(row["symbol"]),
            as_of=as_of,
            currency=str(row.get("currency", "")),
            exchange=str(row.get("exchange", "")),
            industry=str(row.get("industry", "")),
            ceo=str(row.get("ceo", "")),
            sector=str(row.get("sector", "")),
            **numbers,
        )
    except ValueError as exc:
        return _quarantine(row, str(exc), key, observed_at)


def conform_payload(
    payload: RawPayload,
    rows: list[dict],
    instruments: dict[str, Instrument],
    cal: TradingCalendar,
) -> ConformResult:
    """Conform all rows of one payload, attributing bars to their series.

    Bar rows resolve their symbol from a per-row "symbol" key when present;
    single-symbol queries may omit it. Conformed bars landing outside the
    session grid are flagged off-session, not quarantined.
    """
    q = payload.query
    observed_at = payload.fetched_at
    result = ConformResult()
    if q.kind is QueryKind.BONDS:
        tag = SeriesKey(q.symbols[0], Interval.DAILY)
        for row in rows:
            out = conform_bond_row(row, observed_at, tag)
            if isinstance(out, QuarantineRecord):
                result.quarantined.append(out)
            else:
                result.bonds.append(out)
        return result
    if q.kind is QueryKind.PROFILE:
        tag = SeriesKey(q.symbols[0], Interval.DAILY)
        for row in rows:
            out = conform_profile_row(row, observed_at, tag)
            if isinstance(out, QuarantineRecord):
                result.quarantined.append(out)
            else:
                result.profiles.append(out)
        return result

    interval = Interval.DAILY if q.kind is QueryKind.DAILY_HISTORY else q.interval
    fallback = q.symbols[0] if len(q.symbols) == 1 else None
    for row in rows:
        symbol = row.get("symbol", fallback)
        inst = instruments.get(symbol) if symbol else None
        if inst is None:
            tag = SeriesKey(str(symbol) if symbol else q.symbols[0], interval)
            result.quarantined.append(
                _quarantine(row, "unknown_symbol", tag, observed_at)
            )
            continue
        out = conform_bar_row(row, inst, cal, interval, observed_at)
        if isinstance(out, QuarantineRecord):
            result.quarantined.append(out)
        else:
            key = SeriesKey(inst.symbol, interval)
            result.bars.setdefault(key, []).append(out)
            if is_off_session(out.ts, cal, interval):
                result.off_session.append((key, out.ts))
    return result


def dedup_batch(bars: list[ValidatedBar]) -> tuple[list[ValidatedBar], int]:
    """Drop within-batch duplicate timestamps, first occurrence wins.

    Callers group bars by series before deduplication, so a batch never
    mixes series.
    """
    seen: set[int] = set()
    unique: list[ValidatedBar] = []
    duplicates = 0
    for bar in bars:
        if bar.ts in seen:
            duplicates += 1
            continue
        seen.add(bar.ts)
        unique.append(bar)
    return unique, duplicates


def expected_slots(cal: TradingCalendar, key: SeriesKey, start: date, end: date) -> list[int]:
    """Expected timestamps for a series over [start, end] trading days."""
    if key.interval is Interval.DAILY:
        return [daily_bar_ts(d) for d in trading_days(cal, start, end)]
    slots: list[int] = []
    for d in trading_days(cal, start, end):
        slots.extend(session_slots(cal, d))
    return slots


def scan_gaps(
    present: set[int],
    key: SeriesKey,
    cal: TradingCalendar,
    scan_range: tuple[date, date],
) -> GapReport:
    """Compare stored timestamps against the calendar's expected grid."""
    start, end = scan_range
    if start > end:
        raise ValueError(f"scan range start {start} after end {end}")
    expected = expected_slots(cal, key, start, end)
    missing = tuple(ts for ts in expected if ts not in present)
    return GapReport(
        series_key=key,
        missing=missing,
        scanned_range=(start, end),
        expected_count=len(expected),
        present_count=len(expected) - len(missing),
    )
