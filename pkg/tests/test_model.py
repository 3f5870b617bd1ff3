from __future__ import annotations

from datetime import date, time
from decimal import Decimal
from zoneinfo import ZoneInfo

import pytest
from hypothesis import given, strategies as st

from marketflow.model import (
    DEFAULT_CALENDAR,
    Instrument,
    InstrumentKind,
    Interval,
    OhlcvBar,
    RULE_HIGH_GE_OPEN_CLOSE,
    RULE_LOW_LE_HIGH,
    RULE_LOW_LE_OPEN_CLOSE,
    RULE_POSITIVE_PRICES,
    RULE_VOLUME_DIGITS,
    RULE_VOLUME_NON_NEGATIVE,
    RuleViolation,
    SeriesKey,
    TradingCalendar,
    UnknownTimezone,
    daily_bar_ts,
    fixed_to_decimal,
    format_fixed,
    previous_trading_day,
    session_slots,
    to_fixed,
    trading_days,
    validate_bar,
)


class TestFixedPoint:
    def test_unit_scale(self):
        assert to_fixed(1) == 10_000
        assert to_fixed("100.5") == 1_005_000
        assert to_fixed(100.75) == 1_007_500

    def test_round_half_even(self):
        # ...00005 ties round to the even neighbour
        assert to_fixed("1.00005") == 10_000
        assert to_fixed("1.00015") == 10_002
        assert to_fixed("1.00025") == 10_002

    def test_negative(self):
        assert to_fixed("-1.50") == -15_000

    def test_volume_scale_zero(self):
        assert to_fixed(1000, scale=0) == 1000
        assert to_fixed("12.0", scale=0) == 12

    def test_rejects_garbage(self):
        with pytest.raises(ValueError):
            to_fixed("not a number")
        with pytest.raises(ValueError):
            to_fixed(float("nan"))
        with pytest.raises(ValueError):
            to_fixed(float("inf"))

    def test_fixed_to_decimal(self):
        assert fixed_to_decimal(1_005_000) == Decimal("100.5")
        assert fixed_to_decimal(-15_000) == Decimal("-1.5")

    def test_format_trims_to_min_two_decimals(self):
        assert format_fixed(1_005_000) == "100.50"
        assert format_fixed(1_007_500) == "100.75"
        assert format_fixed(1_000_000) == "100.00"
        assert format_fixed(1_234_567) == "123.4567"
        assert format_fixed(-15_000) == "-1.50"

    @given(st.decimals(min_value=-10**6, max_value=10**6, places=4, allow_nan=False))
    def test_round_trip_exact_at_scale(self, value):
        assert fixed_to_decimal(to_fixed(value)) == value

    @given(st.decimals(min_value=0, max_value=10**6, places=4, allow_nan=False))
    def test_format_parses_back(self, value):
        fixed = to_fixed(value)
        assert to_fixed(format_fixed(fixed)) == fixed


def bar(o="10", h="12", low="9", c="11", v=100, ts=1_659_360_600) -> OhlcvBar:
    return OhlcvBar(
        ts=ts, open=to_fixed(o), high=to_fixed(h), low=to_fixed(low),
        close=to_fixed(c), volume=v,
    )


class TestValidateBar:
    def test_clean_stock_bar(self):
        b = bar()
        assert validate_bar(b, InstrumentKind.STOCK) is b

    def test_high_below_open_close(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(o="10", h="9", low="9", c="10"), InstrumentKind.STOCK)
        assert err.value.rule == RULE_HIGH_GE_OPEN_CLOSE

    def test_low_above_high(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(o="10", h="9.5", low="11", c="10"), InstrumentKind.STOCK)
        assert err.value.rule == RULE_LOW_LE_HIGH

    def test_low_above_open(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(o="10", h="12", low="10.5", c="11"), InstrumentKind.STOCK)
        assert err.value.rule == RULE_LOW_LE_OPEN_CLOSE

    def test_negative_volume(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(v=-5), InstrumentKind.STOCK)
        assert err.value.rule == RULE_VOLUME_NON_NEGATIVE

    def test_volume_digit_cap(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(v=10**30), InstrumentKind.STOCK)
        assert err.value.rule == RULE_VOLUME_DIGITS
        validate_bar(bar(v=10**30 - 1), InstrumentKind.STOCK)

    def test_stock_rejects_non_positive_prices(self):
        with pytest.raises(RuleViolation) as err:
            validate_bar(bar(o="0", h="1", low="0", c="0.5"), InstrumentKind.STOCK)
        assert err.value.rule == RULE_POSITIVE_PRICES

    def test_commodity_permits_negative_prices(self):
        b = bar(o="-1.50", h="0.10", low="-2.00", c="-0.75", v=500)
        assert validate_bar(b, InstrumentKind.COMMODITY) is b
        with pytest.raises(RuleViolation):
            validate_bar(b, InstrumentKind.STOCK)

    @given(
        prices=st.lists(
            st.integers(min_value=1, max_value=10_000_000), min_size=4, max_size=4
        ),
        volume=st.integers(min_value=0, max_value=10**9),
    )
    def test_accepted_bars_are_ordered(self, prices, volume):
        o, c = prices[0], prices[1]
        high = max(prices)
        low = min(prices)
        b = OhlcvBar(ts=0, open=o, high=high, low=low, close=c, volume=volume)
        accepted = validate_bar(b, InstrumentKind.STOCK)
        assert accepted.low <= accepted.open <= accepted.high
        assert accepted.low <= accepted.close <= accepted.high
        assert accepted.volume >= 0


class TestInstrument:
    def test_symbol_charset(self):
        Instrument(symbol="BRK.B")
        Instrument(symbol="^GSPC", kind=InstrumentKind.INDEX)
        Instrument(symbol="GC=F", kind=InstrumentKind.COMMODITY)

    @pytest.mark.parametrize("symbol", ["", "aapl", "TOOLONGSYMBOL", "BAD SYM"])
    def test_rejects_bad_symbols(self, symbol):
        with pytest.raises(ValueError):
            Instrument(symbol=symbol)

    def test_series_key_str(self):
        assert str(SeriesKey("AAPL", Interval.MIN15)) == "AAPL@15min"


class TestCalendar:
    def test_regular_weekday_has_26_slots(self, cal):
        slots = session_slots(cal, date(2022, 8, 1))
        assert len(slots) == 26
        tz = ZoneInfo("America/New_York")
        from datetime import datetime

        first = datetime.fromtimestamp(slots[0], tz)
        last = datetime.fromtimestamp(slots[-1], tz)
        assert (first.hour, first.minute) == (9, 30)
        assert (last.hour, last.minute) == (15, 45)

    def test_first_slot_utc_epoch(self, cal):
        # 2022-08-01 09:30 America/New_York = 13:30 UTC
        assert session_slots(cal, date(2022, 8, 1))[0] == 1_659_360_600

    def test_slots_stride_900(self, cal):
        slots = session_slots(cal, date(2022, 8, 1))
        assert all(b - a == 900 for a, b in zip(slots, slots[1:]))

    def test_saturday_empty(self, cal):
        assert session_slots(cal, date(2022, 8, 6)) == []

    def test_holiday_empty(self):
        cal = TradingCalendar(holidays=frozenset({date(2022, 9, 5)}))
        assert session_slots(cal, date(2022, 9, 5)) == []
        assert not cal.is_trading_day(date(2022, 9, 5))

    def test_dst_boundary_keeps_local_open(self):
        # US DST ended 2022-11-06; Friday before and Monday after must both
        # open at 09:30 local despite the UTC offset change.
        cal = TradingCalendar()
        fri = session_slots(cal, date(2022, 11, 4))
        mon = session_slots(cal, date(2022, 11, 7))
        assert fri[0] % 86_400 == 13 * 3600 + 30 * 60  # UTC-4
        assert mon[0] % 86_400 == 14 * 3600 + 30 * 60  # UTC-5
        assert len(fri) == len(mon) == 26

    def test_session_must_divide_into_slots(self):
        with pytest.raises(ValueError):
            TradingCalendar(session_close=time(16, 10))

    def test_unknown_timezone(self):
        with pytest.raises(UnknownTimezone):
            TradingCalendar(timezone="Mars/Olympus").zone

    def test_daily_bar_ts_midnight_utc(self):
        assert daily_bar_ts(date(2022, 8, 1)) == 1_659_312_000
        assert daily_bar_ts(date(2022, 8, 1)) % 86_400 == 0

    def test_trading_days_range(self, cal):
        days = trading_days(cal, date(2022, 8, 1), date(2022, 8, 7))
        assert days == [date(2022, 8, d) for d in (1, 2, 3, 4, 5)]

    def test_previous_trading_day_skips_weekend(self, cal):
        assert previous_trading_day(cal, date(2022, 8, 8)) == date(2022, 8, 5)
        assert previous_trading_day(cal, date(2022, 8, 2)) == date(2022, 8, 1)

    def test_local_date_maps_slot_to_session(self, cal):
        ts = session_slots(cal, date(2022, 8, 1))[-1]
        assert cal.local_date(ts) == date(2022, 8, 1)

    def test_default_calendar_is_equity_profile(self):
        assert DEFAULT_CALENDAR.slots_per_session == 26
        assert DEFAULT_CALENDAR.timezone == "America/New_York"
