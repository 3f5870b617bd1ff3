"""Domain types, bar validation rules, and the trading calendar.

Prices are stored as scale-4 fixed-point integers (1.0 == 10_000) so that
all price arithmetic downstream is exact. Timestamps are UTC epoch seconds
everywhere; wall-clock times only appear at the calendar boundary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from enum import Enum
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

PRICE_SCALE = 4
PRICE_UNIT = 10**PRICE_SCALE
VOLUME_MAX_DIGITS = 30

_SYMBOL_RE = re.compile(r"^[A-Z0-9^.\-=]{1,12}$")


class InstrumentKind(str, Enum):
    STOCK = "stock"
    COMMODITY = "commodity"
    INDEX = "index"
    BOND = "bond"


class Interval(str, Enum):
    MIN15 = "15min"
    DAILY = "daily"


# Kinds whose prices must be strictly positive. Commodities and bonds may
# trade at or below zero (negative crude-oil settlement, negative yields).
POSITIVE_PRICE_KINDS = frozenset({InstrumentKind.STOCK, InstrumentKind.INDEX})

# Rule identifiers, in the order validate_bar checks them.
RULE_LOW_LE_HIGH = "low<=high"
RULE_LOW_LE_OPEN_CLOSE = "low<=min(open,close)"
RULE_HIGH_GE_OPEN_CLOSE = "high>=max(open,close)"
RULE_VOLUME_NON_NEGATIVE = "volume>=0"
RULE_VOLUME_DIGITS = "volume<=30digits"
RULE_POSITIVE_PRICES = "prices>0"


class RuleViolation(Exception):
    """A bar failed one validation rule; identifies the first broken rule."""

    def __init__(self, rule: str, field_name: str, value: object):
        self.rule = rule
        self.field = field_name
        self.value = value
        super().__init__(f"{rule} violated by {field_name}={value!r}")


class UnknownTimezone(Exception):
    """The calendar's IANA zone id cannot be resolved."""


def to_fixed(value: int | float | str | Decimal, scale: int = PRICE_SCALE) -> int:
    """Convert a source number to a scaled integer with round-half-even.

    Floats go through their shortest repr so JSON-decoded values convert
    exactly (json 100.5 -> Decimal("100.5") -> 1005000).
    """
    if isinstance(value, bool):
        raise ValueError(f"not a number: {value!r}")
    if isinstance(value, Decimal):
        d = value
    elif isinstance(value, (int, float)):
        d = Decimal(str(value))
    elif isinstance(value, str):
        try:
            d = Decimal(value.strip())
        except InvalidOperation as exc:
            raise ValueError(f"not a number: {value!r}") from exc
    else:
        raise ValueError(f"not a number: {value!r}")
    if not d.is_finite():
        raise ValueError(f"not finite: {value!r}")
    return int(d.scaleb(scale).to_integral_value(rounding=ROUND_HALF_EVEN))


def fixed_to_decimal(value: int, scale: int = PRICE_SCALE) -> Decimal:
    return Decimal(value).scaleb(-scale)


def format_fixed(value: int, scale: int = PRICE_SCALE, min_decimals: int = 2) -> str:
    """Render a scaled integer with trailing zeros trimmed, min 2 decimals.

    1005000 -> "100.50", 1007501 -> "100.7501", -15000 -> "-1.50".
    """
    sign = "-" if value < 0 else ""
    whole, frac = divmod(abs(value), 10**scale)
    digits = f"{frac:0{scale}d}"
    trimmed = digits.rstrip("0")
    if len(trimmed) < min_decimals:
        trimmed = digits[:min_decimals]
    return f"{sign}{whole}.{trimmed}"


@dataclass(frozen=True)
class Instrument:
    """Identity and classification of one tradable asset."""

    symbol: str
    name: str = ""
    sector: str = ""
    industry: str = ""
    kind: InstrumentKind = InstrumentKind.STOCK

    def __post_init__(self) -> None:
        if not _SYMBOL_RE.match(self.symbol):
            raise ValueError(
                f"invalid symbol {self.symbol!r}: expected 1-12 uppercase "
                "alphanumeric chars plus ^ . - ="
            )


@dataclass(frozen=True)
class SeriesKey:
    """Addresses one stored time series: (symbol, interval)."""

    symbol: str
    interval: Interval

    def __str__(self) -> str:
        return f"{self.symbol}@{self.interval.value}"


@dataclass(frozen=True)
class OhlcvBar:
    """One price bar. Prices are scale-4 fixed-point ints, ts is UTC epoch seconds."""

    ts: int
    open: int
    high: int
    low: int
    close: int
    volume: int


# validate_bar returns the input unchanged; the alias marks call sites that
# only accept bars that already passed the rule set.
ValidatedBar = OhlcvBar


def validate_bar(bar: OhlcvBar, kind: InstrumentKind) -> ValidatedBar:
    """Check every bar rule in a fixed order; return the bar or raise RuleViolation.

    Stocks and indexes additionally require strictly positive prices;
    commodities and bonds permit non-positive prices.
    """
    if bar.low > bar.high:
        raise RuleViolation(RULE_LOW_LE_HIGH, "low", bar.low)
    if bar.low > min(bar.open, bar.close):
        raise RuleViolation(RULE_LOW_LE_OPEN_CLOSE, "low", bar.low)
    if bar.high < max(bar.open, bar.close):
        raise RuleViolation(RULE_HIGH_GE_OPEN_CLOSE, "high", bar.high)
    if bar.volume < 0:
        raise RuleViolation(RULE_VOLUME_NON_NEGATIVE, "volume", bar.volume)
    if bar.volume >= 10**VOLUME_MAX_DIGITS:
        raise RuleViolation(RULE_VOLUME_DIGITS, "volume", bar.volume)
    if kind in POSITIVE_PRICE_KINDS:
        for name in ("open", "high", "low", "close"):
            if getattr(bar, name) <= 0:
                raise RuleViolation(RULE_POSITIVE_PRICES, name, getattr(bar, name))
    return bar


@dataclass(frozen=True)
class BondRate:
    """One sovereign-bond rate observation; rate is scale-4 fixed-point percent."""

    country: str
    duration: str
    currency: str
    date: date
    rate: int

    def __post_init__(self) -> None:
        if not self.country:
            raise ValueError("country must be non-empty")
        if not self.duration:
            raise ValueError("duration must be non-empty")


@dataclass(frozen=True)
class CompanyProfile:
    """Company statement snapshot as delivered by the source."""

    symbol: str
    as_of: date
    price: int
    beta: int
    vol_avg: int
    mkt_cap: int
    last_div: int
    currency: str = ""
    exchange: str = ""
    industry: str = ""
    ceo: str = ""
    sector: str = ""

    def __post_init__(self) -> None:
        if not self.symbol:
            raise ValueError("symbol must be non-empty")
        if self.mkt_cap < 0:
            raise ValueError("mkt_cap must be >= 0")
        if self.vol_avg < 0:
            raise ValueError("vol_avg must be >= 0")


@dataclass(frozen=True)
class TradingCalendar:
    """Weekday mask, session hours, zone, and holidays defining expected slots.

    Defaults model a US equity session: Mon-Fri 09:30-16:00 America/New_York
    in 15-minute slots (26 per session), no holidays.
    """

    weekmask: frozenset[int] = frozenset({0, 1, 2, 3, 4})
    session_open: time = time(9, 30)
    session_close: time = time(16, 0)
    timezone: str = "America/New_York"
    holidays: frozenset[date] = frozenset()
    slot_seconds: int = 900

    def __post_init__(self) -> None:
        span = self._session_span_seconds()
        if span <= 0:
            raise ValueError("session_close must be after session_open")
        if span % self.slot_seconds != 0:
            raise ValueError(
                f"session span {span}s is not a whole number of "
                f"{self.slot_seconds}s slots"
            )

    def _session_span_seconds(self) -> int:
        open_s = self.session_open.hour * 3600 + self.session_open.minute * 60
        close_s = self.session_close.hour * 3600 + self.session_close.minute * 60
        return close_s - open_s

    @property
    def slots_per_session(self) -> int:
        return self._session_span_seconds() // self.slot_seconds

    @property
    def zone(self) -> ZoneInfo:
        try:
            return ZoneInfo(self.timezone)
        except (ZoneInfoNotFoundError, ValueError, KeyError) as exc:
            raise UnknownTimezone(self.timezone) from exc

    def is_trading_day(self, day: date) -> bool:
        return day.weekday() in self.weekmask and day not in self.holidays

    def local_date(self, ts: int) -> date:
        """Exchange-local calendar date of a UTC timestamp."""
        return datetime.fromtimestamp(ts, tz=self.zone).date()


DEFAULT_CALENDAR = TradingCalendar()


def session_slots(cal: TradingCalendar, day: date) -> list[int]:
    """Expected bar timestamps (UTC epoch seconds) for one session.

    Empty for weekends and holidays; otherwise exactly slots_per_session
    timestamps spaced slot_seconds apart, the first at session open.
    """
    if not cal.is_trading_day(day):
        return []
    open_dt = datetime.combine(day, cal.session_open, tzinfo=cal.zone)
    start = int(open_dt.timestamp())
    return [start + i * cal.slot_seconds for i in range(cal.slots_per_session)]


def daily_bar_ts(day: date) -> int:
    """Timestamp convention for daily bars: session date at 00:00 UTC."""
    return int(datetime.combine(day, time(0, 0), tzinfo=timezone.utc).timestamp())


def trading_days(cal: TradingCalendar, start: date, end: date) -> list[date]:
    """Trading days within [start, end], ascending."""
    days = []
    d = start
    while d <= end:
        if cal.is_trading_day(d):
            days.append(d)
        d += timedelta(days=1)
    return days


def previous_trading_day(cal: TradingCalendar, day: date, limit: int = 366) -> date:
    """Latest trading day strictly before `day`."""
    d = day - timedelta(days=1)
    for _ in range(limit):
        if cal.is_trading_day(d):
            return d
        d -= timedelta(days=1)
    raise ValueError(f"no trading day found within {limit} days before {day}")
