from __future__ import annotations

import io
from datetime import date

import pytest
from hypothesis import given, strategies as st

from marketflow.model import (
    BondRate,
    CompanyProfile,
    Instrument,
    InstrumentKind,
    Interval,
    OhlcvBar,
    SeriesKey,
    to_fixed,
)
from marketflow.store import (
    CSV_HEADER,
    MemoryBarStore,
    SinkError,
    SqliteBarStore,
    export_filename,
    export_flat,
    format_bar_csv_row,
    import_flat,
    open_store,
)

KEY = SeriesKey("AAPL", Interval.MIN15)


def make_bar(ts: int, seed: int = 0) -> OhlcvBar:
    base = 1_000_000 + seed * 100
    return OhlcvBar(
        ts=ts, open=base, high=base + 5_000, low=base - 5_000,
        close=base + 1_000, volume=1_000 + seed,
    )


@pytest.fixture(params=["memory", "sqlite"])
def store(request, tmp_path):
    s = open_store(request.param, tmp_path / "staging.db")
    yield s
    s.close()


class TestUpsertBars:
    def test_fresh_insert(self, store):
        stats = store.upsert_bars(KEY, [make_bar(900 * i) for i in range(3)])
        assert (stats.inserted, stats.ignored) == (3, 0)

    def test_second_load_is_noop(self, store):
        bars = [make_bar(900 * i) for i in range(3)]
        store.upsert_bars(KEY, bars)
        stats = store.upsert_bars(KEY, bars)
        assert (stats.inserted, stats.ignored) == (0, 3)

    def test_partial_overlap(self, store):
        store.upsert_bars(KEY, [make_bar(0), make_bar(900)])
        stats = store.upsert_bars(
            KEY, [make_bar(0), make_bar(900), make_bar(1800), make_bar(2700)]
        )
        assert (stats.inserted, stats.ignored) == (2, 2)

    def test_conflicting_duplicate_keeps_first_row(self, store):
        original = make_bar(900, seed=1)
        store.upsert_bars(KEY, [original])
        store.upsert_bars(KEY, [make_bar(900, seed=9)])
        assert store.read_series(KEY, (0, 10_000)) == [original]

    def test_series_are_isolated(self, store):
        other = SeriesKey("MSFT", Interval.MIN15)
        store.upsert_bars(KEY, [make_bar(900)])
        store.upsert_bars(other, [make_bar(900)])
        assert len(store.read_series(KEY, (0, 10_000))) == 1
        assert sorted(store.list_series(), key=str) == [KEY, other]

    @given(stamps=st.lists(st.integers(min_value=0, max_value=10**6), max_size=60))
    def test_idempotence_property(self, stamps):
        store = MemoryBarStore()
        bars = [make_bar(ts) for ts in stamps]
        store.upsert_bars(KEY, bars)
        first = store.read_series(KEY, (0, 10**6))
        store.upsert_bars(KEY, bars)
        assert store.read_series(KEY, (0, 10**6)) == first


class TestReadSeries:
    def test_empty_series(self, store):
        assert store.read_series(KEY, (0, 10**9)) == []

    def test_round_trip_ascending(self, store):
        bars = [make_bar(900 * i, seed=i) for i in range(26)]
        store.upsert_bars(KEY, list(reversed(bars)))
        assert store.read_series(KEY, (0, 900 * 26)) == bars

    def test_range_is_inclusive_filter(self, store):
        store.upsert_bars(KEY, [make_bar(0), make_bar(900), make_bar(1800)])
        got = store.read_series(KEY, (900, 1800))
        assert [b.ts for b in got] == [900, 1800]


class TestSeriesExtent:
    def test_empty(self, store):
        extent = store.series_extent(KEY)
        assert extent.count == 0
        assert extent.min_ts is None and extent.max_ts is None

    def test_counts_and_bounds(self, store):
        store.upsert_bars(KEY, [make_bar(900 * i) for i in range(26)])
        extent = store.series_extent(KEY)
        assert (extent.count, extent.min_ts, extent.max_ts) == (26, 0, 900 * 25)

    def test_unchanged_by_duplicate_batch(self, store):
        bars = [make_bar(900 * i) for i in range(5)]
        store.upsert_bars(KEY, bars)
        before = store.series_extent(KEY)
        store.upsert_bars(KEY, bars)
        assert store.series_extent(KEY) == before


class TestBondsAndProfiles:
    BOND = BondRate(country="US", duration="10Y", currency="USD",
                    date=date(2022, 8, 1), rate=to_fixed("2.605"))
    PROFILE = CompanyProfile(
        symbol="AAPL", as_of=date(2022, 8, 1), price=to_fixed("161.51"),
        beta=to_fixed("1.19"), vol_avg=77_000_000, mkt_cap=2_600_000_000_000,
        last_div=to_fixed("0.91"), currency="USD", exchange="NASDAQ",
        industry="Consumer Electronics", ceo="T. Cook", sector="Technology",
    )

    def test_bond_idempotence(self, store):
        assert store.upsert_bond_rates([self.BOND]).inserted == 1
        stats = store.upsert_bond_rates([self.BOND])
        assert (stats.inserted, stats.ignored) == (0, 1)
        assert store.count_bond_rates() == 1

    def test_profile_idempotence(self, store):
        assert store.upsert_profiles([self.PROFILE]).inserted == 1
        stats = store.upsert_profiles([self.PROFILE])
        assert (stats.inserted, stats.ignored) == (0, 1)
        assert store.count_profiles() == 1


class TestSqlitePersistence:
    def test_reopen_preserves_rows(self, tmp_path):
        path = tmp_path / "staging.db"
        first = SqliteBarStore(path)
        first.upsert_bars(KEY, [make_bar(900)])
        first.close()
        second = SqliteBarStore(path)
        assert len(second.read_series(KEY, (0, 10_000))) == 1
        second.close()


ONE_BAR = OhlcvBar(
    ts=1_659_360_600, open=to_fixed("100.50"), high=to_fixed("101.00"),
    low=to_fixed("100.00"), close=to_fixed("100.75"), volume=1000,
)


class TestFlatExport:
    def test_empty_range_header_only(self, store):
        sink = io.BytesIO()
        stats = export_flat(store, KEY, (0, 10**9), sink)
        assert stats.rows == 0
        assert stats.bytes == len(CSV_HEADER) + 1
        assert sink.getvalue() == (CSV_HEADER + "\n").encode()

    def test_one_bar_exact_bytes(self, store):
        store.upsert_bars(KEY, [ONE_BAR])
        sink = io.BytesIO()
        stats = export_flat(store, KEY, (0, 10**10), sink)
        expected_row = "2022-08-01T13:30:00Z,100.50,101.00,100.00,100.75,1000"
        assert sink.getvalue().decode() == f"{CSV_HEADER}\n{expected_row}\n"
        assert stats.rows == 1
        assert stats.bytes == len(CSV_HEADER) + 1 + len(expected_row) + 1

    def test_format_trims_trailing_zeros_to_two(self):
        row = format_bar_csv_row(ONE_BAR)
        assert row.split(",")[1:] == ["100.50", "101.00", "100.00", "100.75", "1000"]

    def test_export_filename_shape(self):
        name = export_filename("AAPL", InstrumentKind.STOCK,
                               date(2022, 8, 1), date(2022, 9, 9))
        assert name == "AAPL-STOCKS_2022-08-01_2022-09-09.csv"
        assert export_filename("GCUSD", InstrumentKind.COMMODITY,
                               date(2022, 8, 1), date(2022, 8, 1)).startswith(
            "GCUSD-COMMODITYS_"
        )

    def test_sink_failure_wrapped(self, store):
        class Broken:
            def write(self, _data):
                raise OSError("disk full")

        store.upsert_bars(KEY, [ONE_BAR])
        with pytest.raises(SinkError):
            export_flat(store, KEY, (0, 10**10), Broken())


class TestImportFlat:
    def test_round_trip(self, store):
        bars = [make_bar(1_659_360_600 + 900 * i, seed=i) for i in range(26)]
        store.upsert_bars(KEY, bars)
        sink = io.BytesIO()
        export_flat(store, KEY, (0, 10**10), sink)
        rows = import_flat(sink.getvalue().decode().splitlines())
        assert len(rows) == 26
        assert rows[0]["date"].endswith("Z")

    def test_header_required(self):
        with pytest.raises(ValueError):
            import_flat(["nope,header", "1,2,3,4,5,6"])

    def test_field_count_enforced(self):
        with pytest.raises(ValueError):
            import_flat([CSV_HEADER, "2022-08-01T13:30:00Z,1,2,3"])
