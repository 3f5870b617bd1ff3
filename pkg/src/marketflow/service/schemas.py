"""Request/response bodies for the HTTP API."""

from __future__ import annotations

from datetime import date

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    mode: str
    store: str


class ExtractRequest(BaseModel):
    session: date
    symbols: list[str] | None = None


class JobReportModel(BaseModel):
    job_id: str
    fetched: int
    parsed: int
    conformed: int
    quarantined: int
    deduped: int
    inserted: int
    ignored: int
    duration_s: float


class ExtractResponse(BaseModel):
    session: date
    reports: list[JobReportModel]
    exhausted: list[str]


class RangeRequest(BaseModel):
    start: date = Field(alias="from")
    end: date = Field(alias="to")
    symbols: list[str] | None = None

    model_config = {"populate_by_name": True}


class GapReportModel(BaseModel):
    symbol: str
    interval: str
    missing: list[int]
    scanned_from: date
    scanned_to: date
    expected_count: int
    present_count: int


class BackfillResponse(BaseModel):
    gaps_before: int
    jobs_issued: int
    residual: int
    reports: list[JobReportModel]


class LoadRequest(BaseModel):
    plan: str


class LoadReportModel(BaseModel):
    plan: str
    rows_read: int
    rows_loaded: int
    rows_rejected: int
    rows_ignored: int
    duration_s: float


class EstimateRequest(BaseModel):
    overrides: dict[str, int | float] = Field(default_factory=dict)


class EstimateResponse(BaseModel):
    ops_per_day: int
    records_per_day: int
    bytes_per_day: int
    bytes_per_day_human: str
    bytes_per_year: int
    bytes_per_year_human: str
    bytes_per_symbol_retained: int
    bytes_per_symbol_retained_human: str
    total_bytes: int
    total_bytes_human: str
    footnote: str


class BarModel(BaseModel):
    ts: int
    open: str
    high: str
    low: str
    close: str
    volume: int


class SeriesModel(BaseModel):
    symbol: str
    interval: str
    count: int
    min_ts: int | None
    max_ts: int | None


class FactModel(BaseModel):
    symbol: str
    interval: str
    ts: int
    open: str
    high: str
    low: str
    close: str
    volume: int
