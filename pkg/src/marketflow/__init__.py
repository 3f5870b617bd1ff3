"""Market data pipeline: extract, conform, store, warehouse, project.

The package pulls OHLCV, bond, and commodity series from a rate-limited
HTTP source (or a deterministic replay directory), validates rows into a
staging store with quarantine for rejects, detects and backfills calendar
gaps by refetching, loads a star-schema warehouse through declarative
plans, and turns the throughput/storage constants into capacity reports.
"""

from .capacity import CapacityModel, CapacityReport, format_binary, storage_projection
from .model import (
    DEFAULT_CALENDAR,
    Instrument,
    InstrumentKind,
    Interval,
    OhlcvBar,
    RuleViolation,
    SeriesKey,
    TradingCalendar,
    fixed_to_decimal,
    format_fixed,
    to_fixed,
    validate_bar,
)
from .orchestrator import (
    BackfillReport,
    ExtractionJob,
    JobReport,
    JobState,
    RunDeps,
    backfill_pass,
    plan_daily_run,
    plan_for_session,
    retry_policy,
    run_job,
    run_jobs,
    run_pipeline,
    schedule_loop,
)
from .store import open_store
from .transform import GapReport, QuarantineRecord, conform_payload, parse_payload, scan_gaps
from .warehouse import LoadPlan, LoadReport, PlanType, Warehouse, aggregate_daily

__version__ = "0.1.0"

__all__ = [
    "BackfillReport",
    "CapacityModel",
    "CapacityReport",
    "DEFAULT_CALENDAR",
    "ExtractionJob",
    "GapReport",
    "Instrument",
    "InstrumentKind",
    "Interval",
    "JobReport",
    "JobState",
    "LoadPlan",
    "LoadReport",
    "OhlcvBar",
    "PlanType",
    "QuarantineRecord",
    "RuleViolation",
    "RunDeps",
    "SeriesKey",
    "TradingCalendar",
    "Warehouse",
    "aggregate_daily",
    "backfill_pass",
    "conform_payload",
    "fixed_to_decimal",
    "format_binary",
    "format_fixed",
    "open_store",
    "parse_payload",
    "plan_daily_run",
    "plan_for_session",
    "retry_policy",
    "run_job",
    "run_jobs",
    "run_pipeline",
    "schedule_loop",
    "scan_gaps",
    "storage_projection",
    "to_fixed",
    "validate_bar",
    "__version__",
]
