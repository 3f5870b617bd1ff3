"""Throughput and storage planning arithmetic.

All derived quantities are computed with exact rational arithmetic
(int / Fraction); no floats enter the formula paths. The defaults model a
source limited to 300 calls/min with 7 s collection + 5 s insertion per
operation, 5 symbols per call, and a measured 172 bytes per stored record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from fractions import Fraction

SECONDS_PER_DAY = 86_400
MINUTES_PER_DAY = 1_440

_BINARY_UNITS = (
    ("TiB", 1024**4, 2),
    ("GiB", 1024**3, 2),
    ("MiB", 1024**2, 1),
    ("KiB", 1024, 1),
)


def format_binary(num_bytes: int) -> str:
    """Render bytes in binary units: MiB at one decimal, GiB/TiB at two."""
    for unit, factor, decimals in _BINARY_UNITS:
        if num_bytes >= factor:
            return f"{num_bytes / factor:.{decimals}f} {unit}"
    return f"{num_bytes} B"


def _as_fraction(value: int | float | str) -> Fraction:
    # Floats convert via str so 0.05 means 1/20, not its binary neighbour.
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class CapacityModel:
    """Throughput/storage constants from which projections are derived."""

    rate_per_min: int = 300
    daily_cap: int = 432_000
    query_latency_s: int | float = 7
    insert_latency_s: int | float = 5
    symbols_per_call: int = 5
    records_per_query: int = 1
    bytes_per_record: int = 172
    trading_days_per_year: int = 250
    years_retained: int = 6
    symbols_tracked: int = 500

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if _as_fraction(value) <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {value!r}")
        if self.symbols_per_call > 5:
            raise ValueError("symbols_per_call may not exceed 5")


@dataclass(frozen=True)
class CapacityReport:
    """Projection derived from a CapacityModel; byte fields are exact."""

    ops_per_day: int
    records_per_day: int
    bytes_per_day: int
    bytes_per_year: int
    bytes_per_symbol_retained: int
    total_bytes: int
    footnote: str = ""

    def as_dict(self) -> dict:
        return {
            "ops_per_day": self.ops_per_day,
            "records_per_day": self.records_per_day,
            "bytes_per_day": self.bytes_per_day,
            "bytes_per_day_human": format_binary(self.bytes_per_day),
            "bytes_per_year": self.bytes_per_year,
            "bytes_per_year_human": format_binary(self.bytes_per_year),
            "bytes_per_symbol_retained": self.bytes_per_symbol_retained,
            "bytes_per_symbol_retained_human": format_binary(self.bytes_per_symbol_retained),
            "total_bytes": self.total_bytes,
            "total_bytes_human": format_binary(self.total_bytes),
            "footnote": self.footnote,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def as_table(self) -> str:
        rows = [
            ("query-store operations/day", f"{self.ops_per_day:,}"),
            ("records/day", f"{self.records_per_day:,}"),
            ("bytes/day", f"{self.bytes_per_day:,} ({format_binary(self.bytes_per_day)})"),
            ("bytes/year", f"{self.bytes_per_year:,} ({format_binary(self.bytes_per_year)})"),
            (
                "bytes/symbol retained",
                f"{self.bytes_per_symbol_retained:,} "
                f"({format_binary(self.bytes_per_symbol_retained)})",
            ),
            ("total bytes", f"{self.total_bytes:,} ({format_binary(self.total_bytes)})"),
        ]
        width = max(len(label) for label, _ in rows)
        lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
        if self.footnote:
            lines.append(f"note: {self.footnote}")
        return "\n".join(lines)


def ops_per_day(m: CapacityModel) -> int:
    """Daily query-store operation budget.

    The binding constraint is the smallest of: the latency bound
    (seconds per day over query+insert latency), the per-day call cap,
    and the per-minute rate sustained for a full day.
    """
    latency = _as_fraction(m.query_latency_s) + _as_fraction(m.insert_latency_s)
    latency_bound = int(Fraction(SECONDS_PER_DAY) / latency)  # floor
    return min(latency_bound, m.daily_cap, m.rate_per_min * MINUTES_PER_DAY)


def records_per_day(m: CapacityModel) -> int:
    return ops_per_day(m) * m.symbols_per_call * m.records_per_query


def storage_projection(m: CapacityModel) -> CapacityReport:
    """Project storage growth from the model's record rate and density."""
    ops = ops_per_day(m)
    records = ops * m.symbols_per_call * m.records_per_query
    per_day = records * m.bytes_per_record
    per_year = per_day * m.trading_days_per_year
    # The per-call projection covers symbols_per_call symbols at once, so the
    # retained volume splits evenly across them.
    per_symbol = per_year * m.years_retained // m.symbols_per_call
    total = per_symbol * m.symbols_tracked
    footnote = _rounded_chain_footnote(per_year, m)
    return CapacityReport(
        ops_per_day=ops,
        records_per_day=records,
        bytes_per_day=per_day,
        bytes_per_year=per_year,
        bytes_per_symbol_retained=per_symbol,
        total_bytes=total,
        footnote=footnote,
    )


def _rounded_chain_footnote(per_year: int, m: CapacityModel) -> str:
    """Back-of-envelope chain that rounds the yearly GiB figure first.

    Rounding before multiplying through gives the familiar planning sequence
    (e.g. 1.44 GiB/yr -> 8.64 GiB -> 1.73 GiB/symbol -> 864 GiB total);
    the report's byte fields carry the exact, unrounded chain.
    """
    year_gib = round(per_year / 1024**3, 2)
    retained_gib = round(year_gib * m.years_retained, 2)
    per_symbol_gib = retained_gib / m.symbols_per_call
    total_gib = round(per_symbol_gib * m.symbols_tracked, 2)
    return (
        f"rounded chain: {year_gib} GiB/year x {m.years_retained} years "
        f"= {retained_gib} GiB, / {m.symbols_per_call} symbols "
        f"= {round(per_symbol_gib, 2)} GiB/symbol, x {m.symbols_tracked} symbols "
        f"= {total_gib} GiB"
    )
