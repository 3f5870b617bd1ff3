"""Run planning, job execution with retry, gap backfill, and scheduling.

A run is planned as a list of extraction jobs (at most five symbols per
query), executed through a shared rate limiter against the bound source,
and reconciled into JobReports whose counts conserve: every parsed row is
either conformed or quarantined, and every deduplicated row is either
inserted or ignored. Failures mark the job for retry with exponential
backoff; exhaustion emits exactly one error notification.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time as dtime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence
from zoneinfo import ZoneInfo

from .gateway import (
    DailyCapExhausted,
    DateRange,
    FixtureMissing,
    MAX_SYMBOLS_PER_QUERY,
    QueryKind,
    RateLimiter,
    RawPayload,
    SourceQuery,
    TransportError,
)
from .model import (
    Instrument,
    InstrumentKind,
    Interval,
    SeriesKey,
    TradingCalendar,
    daily_bar_ts,
    previous_trading_day,
)
from .notify import NotificationEvent, Notifier, Severity
from .store import BarStore, StorageError
from .transform import (
    EmptyPayload,
    GapReport,
    ParseError,
    QuarantineRecord,
    conform_payload,
    dedup_batch,
    parse_payload,
    scan_gaps,
)
from .warehouse import LoadPlan, LoadReport, Warehouse


class JobState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    EXHAUSTED = "exhausted"


class EmptyUniverse(Exception):
    """A run was planned over zero instruments."""


class ConcurrentRun(Exception):
    """A second pipeline run was started while one is in progress."""


@dataclass
class ExtractionJob:
    """One source query plus its execution state; attempt counts from 1."""

    job_id: str
    query: SourceQuery
    attempt: int = 1
    state: JobState = JobState.PENDING


@dataclass(frozen=True)
class JobReport:
    """Per-job reconciliation: parsed = conformed + quarantined and
    inserted + ignored = deduped (the batch size after deduplication)."""

    job_id: str
    fetched: int
    parsed: int
    conformed: int
    quarantined: int
    deduped: int
    inserted: int
    ignored: int
    duration_s: float

    def as_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "fetched": self.fetched,
            "parsed": self.parsed,
            "conformed": self.conformed,
            "quarantined": self.quarantined,
            "deduped": self.deduped,
            "inserted": self.inserted,
            "ignored": self.ignored,
            "duration_s": round(self.duration_s, 6),
        }


@dataclass(frozen=True)
class BackfillReport:
    """Outcome of one backfill pass, including the post-pass residual scan."""

    scope: tuple[SeriesKey, ...]
    gaps_before: int
    jobs_issued: int
    job_reports: tuple[JobReport, ...]
    residual_reports: tuple[GapReport, ...]

    @property
    def residual(self) -> int:
        return sum(len(r.missing) for r in self.residual_reports)


class Source(Protocol):
    source_id: str

    def execute(self, q: SourceQuery, now: float | None = None) -> RawPayload: ...


def retry_policy(attempt: int, base: float = 30.0, max_attempts: int = 3) -> float | None:
    """Backoff delay before the next attempt, or None once attempts are spent."""
    if attempt < 1:
        raise ValueError("attempt counts from 1")
    if attempt >= max_attempts:
        return None
    return base * 2 ** (attempt - 1)


@dataclass
class RunDeps:
    """Everything a job needs; clock and sleep are injectable for tests."""

    source: Source
    limiter: RateLimiter
    store: BarStore
    cal: TradingCalendar
    instruments: dict[str, Instrument]
    notifier: Notifier
    clock: Callable[[], float] = time.time
    sleep: Callable[[float], None] = time.sleep
    quarantine_log: Path | None = None
    max_workers: int = 4
    run_lock: threading.Lock = field(default_factory=threading.Lock)
    _q_lock: threading.Lock = field(default_factory=threading.Lock)

    def record_quarantine(self, records: Sequence[QuarantineRecord]) -> None:
        if not records or self.quarantine_log is None:
            return
        with self._q_lock:
            self.quarantine_log.parent.mkdir(parents=True, exist_ok=True)
            with self.quarantine_log.open("a", encoding="utf-8") as fh:
                for rec in records:
                    fh.write(rec.to_json() + "\n")

    def event(self, severity: Severity, subject: str, body: str = "", **context) -> None:
        self.notifier.notify(
            NotificationEvent(
                occurred_at=int(self.clock()),
                severity=severity,
                subject=subject,
                body=body,
                context=context,
            )
        )


def _query_kind_for(inst: Instrument, interval: Interval) -> QueryKind:
    if inst.kind is InstrumentKind.COMMODITY:
        return QueryKind.COMMODITIES
    if inst.kind is InstrumentKind.BOND:
        return QueryKind.BONDS
    return QueryKind.INTRADAY if interval is Interval.MIN15 else QueryKind.DAILY_HISTORY


def _batches(symbols: Sequence[str], size: int = MAX_SYMBOLS_PER_QUERY):
    for i in range(0, len(symbols), size):
        yield tuple(symbols[i : i + size])


def plan_for_session(
    universe: Sequence[Instrument],
    cal: TradingCalendar,
    session: date,
    include_profiles: bool = False,
) -> list[ExtractionJob]:
    """Jobs covering one trading session; empty for non-trading days.

    Universe order is preserved so batch composition (and therefore replay
    fixture names) is stable across runs.
    """
    if not universe:
        raise EmptyUniverse("no instruments configured")
    if not cal.is_trading_day(session):
        return []
    jobs: list[ExtractionJob] = []
    day = DateRange(session, session)

    def add(kind: QueryKind, symbols: tuple[str, ...], interval: Interval = Interval.MIN15):
        jobs.append(
            ExtractionJob(
                job_id=f"{session.isoformat()}:{kind.value}:{len(jobs):03d}",
                query=SourceQuery(kind=kind, symbols=symbols, range=day, interval=interval),
            )
        )

    intraday = [i.symbol for i in universe if i.kind in (InstrumentKind.STOCK, InstrumentKind.INDEX)]
    commodities = [i.symbol for i in universe if i.kind is InstrumentKind.COMMODITY]
    bonds = [i.symbol for i in universe if i.kind is InstrumentKind.BOND]
    for batch in _batches(intraday):
        add(QueryKind.INTRADAY, batch)
    for batch in _batches(commodities):
        add(QueryKind.COMMODITIES, batch)
    for batch in _batches(bonds):
        add(QueryKind.BONDS, batch)
    if include_profiles:
        for batch in _batches(intraday):
            add(QueryKind.PROFILE, batch)
    return jobs


def plan_daily_run(
    universe: Sequence[Instrument],
    cal: TradingCalendar,
    run_date: date,
    include_profiles: bool = False,
) -> list[ExtractionJob]:
    """A morning run extracts the previous trading session."""
    session = previous_trading_day(cal, run_date)
    return plan_for_session(universe, cal, session, include_profiles=include_profiles)


def run_job(job: ExtractionJob, deps: RunDeps) -> JobReport:
    """Execute one job: permit, fetch, parse, conform, dedup, upsert.

    Transport, parse, and storage errors mark the job failed so the retry
    loop can reschedule it; quarantined rows never fail a job.
    """
    started = deps.clock()
    job.state = JobState.RUNNING

    def failed(reason: str) -> JobReport:
        job.state = JobState.FAILED
        deps.event(
            Severity.WARNING,
            "job failed",
            f"{job.job_id} attempt {job.attempt}: {reason}",
            job_id=job.job_id,
            attempt=job.attempt,
        )
        return JobReport(
            job_id=job.job_id, fetched=0, parsed=0, conformed=0,
            quarantined=0, deduped=0, inserted=0, ignored=0,
            duration_s=deps.clock() - started,
        )

    try:
        grant = deps.limiter.acquire(deps.clock())
    except DailyCapExhausted as exc:
        return failed(f"daily cap exhausted: {exc}")
    wait = grant.ready_at - deps.clock()
    if wait > 0:
        deps.sleep(wait)

    try:
        payload = deps.source.execute(job.query, now=grant.ready_at)
    except (TransportError, FixtureMissing) as exc:
        return failed(f"fetch: {exc}")

    try:
        rows = parse_payload(payload)
    except EmptyPayload:
        job.state = JobState.SUCCEEDED
        deps.event(
            Severity.WARNING,
            "empty payload",
            f"{job.job_id}: source returned no rows",
            job_id=job.job_id,
        )
        return JobReport(
            job_id=job.job_id, fetched=1, parsed=0, conformed=0,
            quarantined=0, deduped=0, inserted=0, ignored=0,
            duration_s=deps.clock() - started,
        )
    except ParseError as exc:
        return failed(f"parse: {exc}")

    result = conform_payload(payload, rows, deps.instruments, deps.cal)
    deps.record_quarantine(result.quarantined)
    if result.off_session:
        deps.event(
            Severity.WARNING,
            "off-session bars",
            f"{job.job_id}: {len(result.off_session)} bars outside the session grid",
            job_id=job.job_id,
            count=len(result.off_session),
        )

    deduped = inserted = ignored = 0
    try:
        for key in sorted(result.bars, key=str):
            unique, _ = dedup_batch(result.bars[key])
            stats = deps.store.upsert_bars(key, unique)
            deduped += len(unique)
            inserted += stats.inserted
            ignored += stats.ignored
        if result.bonds:
            stats = deps.store.upsert_bond_rates(result.bonds)
            deduped += len(result.bonds)
            inserted += stats.inserted
            ignored += stats.ignored
        if result.profiles:
            stats = deps.store.upsert_profiles(result.profiles)
            deduped += len(result.profiles)
            inserted += stats.inserted
            ignored += stats.ignored
    except StorageError as exc:
        return failed(f"store: {exc}")

    job.state = JobState.SUCCEEDED
    return JobReport(
        job_id=job.job_id,
        fetched=1,
        parsed=len(rows),
        conformed=result.conformed_count,
        quarantined=len(result.quarantined),
        deduped=deduped,
        inserted=inserted,
        ignored=ignored,
        duration_s=deps.clock() - started,
    )


def _run_with_retries(job: ExtractionJob, deps: RunDeps) -> JobReport:
    while True:
        report = run_job(job, deps)
        if job.state is JobState.SUCCEEDED:
            return report
        delay = retry_policy(job.attempt)
        if delay is None:
            job.state = JobState.EXHAUSTED
            deps.event(
                Severity.ERROR,
                "job exhausted",
                f"{job.job_id} gave up after {job.attempt} attempts",
                job_id=job.job_id,
                attempts=job.attempt,
            )
            return report
        deps.sleep(delay)
        job.attempt += 1
        job.state = JobState.PENDING


def run_jobs(jobs: Sequence[ExtractionJob], deps: RunDeps) -> list[JobReport]:
    """Execute jobs on a bounded pool; order of reports matches input order.

    Correctness does not depend on pool size: the store serializes writes
    and the rate limiter is shared.
    """
    if not jobs:
        return []
    with ThreadPoolExecutor(max_workers=deps.max_workers) as pool:
        return list(pool.map(lambda j: _run_with_retries(j, deps), jobs))


def _ts_window(start: date, end: date) -> tuple[int, int]:
    return daily_bar_ts(start), daily_bar_ts(end) + 86_399


def _session_of(ts: int, key: SeriesKey, cal: TradingCalendar) -> date:
    if key.interval is Interval.DAILY:
        return datetime.fromtimestamp(ts, tz=timezone.utc).date()
    return cal.local_date(ts)


def scan_scope(
    scope: Iterable[SeriesKey], date_range: tuple[date, date], deps: RunDeps
) -> list[GapReport]:
    lo, hi = _ts_window(*date_range)
    reports = []
    for key in sorted(scope, key=str):
        present = {b.ts for b in deps.store.read_series(key, (lo, hi))}
        reports.append(scan_gaps(present, key, deps.cal, date_range))
    return reports


def backfill_pass(
    scope: Iterable[SeriesKey], date_range: tuple[date, date], deps: RunDeps
) -> BackfillReport:
    """Scan for gaps, refetch the gapped sessions, re-scan for residue.

    Missing slots are repaired only by asking the source again, never by
    synthesizing values; whatever the source still does not return is
    reported as a residual gap with a warning.
    """
    scope = tuple(sorted(scope, key=str))
    before = scan_scope(scope, date_range, deps)
    gaps_before = sum(len(r.missing) for r in before)

    jobs: list[ExtractionJob] = []
    for rep in before:
        key = rep.series_key
        inst = deps.instruments.get(key.symbol)
        if inst is None or not rep.missing:
            continue
        sessions = sorted({_session_of(ts, key, deps.cal) for ts in rep.missing})
        for session in sessions:
            kind = _query_kind_for(inst, key.interval)
            jobs.append(
                ExtractionJob(
                    job_id=f"backfill:{key.symbol}:{session.isoformat()}",
                    query=SourceQuery(
                        kind=kind,
                        symbols=(key.symbol,),
                        range=DateRange(session, session),
                        interval=key.interval,
                    ),
                )
            )
    reports = run_jobs(jobs, deps)

    after = scan_scope(scope, date_range, deps)
    residual = sum(len(r.missing) for r in after)
    if residual > 0:
        deps.event(
            Severity.WARNING,
            "residual gaps after backfill",
            f"{residual} expected slots remain missing across {len(scope)} series",
            residual=residual,
            range=[date_range[0].isoformat(), date_range[1].isoformat()],
        )
    return BackfillReport(
        scope=scope,
        gaps_before=gaps_before,
        jobs_issued=len(jobs),
        job_reports=tuple(reports),
        residual_reports=tuple(after),
    )


@dataclass(frozen=True)
class PipelineResult:
    run_date: date
    session: date | None
    job_reports: tuple[JobReport, ...]
    backfill: BackfillReport | None
    load_reports: tuple[LoadReport, ...]
    duration_s: float

    def totals(self) -> dict:
        fields = ("fetched", "parsed", "conformed", "quarantined", "deduped", "inserted", "ignored")
        out = {f: sum(getattr(r, f) for r in self.job_reports) for f in fields}
        out["jobs"] = len(self.job_reports)
        out["residual_gaps"] = self.backfill.residual if self.backfill else 0
        out["rows_loaded"] = sum(r.rows_loaded for r in self.load_reports)
        return out


def run_pipeline(
    deps: RunDeps,
    universe: Sequence[Instrument],
    run_date: date,
    warehouse: Warehouse | None = None,
    plans: Sequence[LoadPlan] = (),
    plan_sources: Mapping[str, BarStore] | None = None,
    backfill_scope: Iterable[SeriesKey] | None = None,
    run_log: Path | None = None,
    include_profiles: bool = False,
) -> PipelineResult:
    """One full scheduled run: extract, backfill, load, summarize.

    Holding a run lock for the duration is the no-interleaving witness;
    a second concurrent call fails fast instead of corrupting counts.
    """
    if not deps.run_lock.acquire(blocking=False):
        raise ConcurrentRun("a pipeline run is already in progress")
    started = deps.clock()
    try:
        jobs = plan_daily_run(universe, deps.cal, run_date, include_profiles=include_profiles)
        session = previous_trading_day(deps.cal, run_date)
        reports = run_jobs(jobs, deps)

        if backfill_scope is None:
            backfill_scope = [
                SeriesKey(i.symbol, Interval.MIN15)
                for i in universe
                if i.kind in (InstrumentKind.STOCK, InstrumentKind.INDEX, InstrumentKind.COMMODITY)
            ]
        backfill = backfill_pass(backfill_scope, (session, session), deps)

        load_reports: list[LoadReport] = []
        if warehouse is not None:
            for plan in plans:
                warehouse.upsert_dimensions(universe, plan.range)
                load_reports.append(warehouse.run_load_plan(plan, plan_sources))

        result = PipelineResult(
            run_date=run_date,
            session=session,
            job_reports=tuple(reports),
            backfill=backfill,
            load_reports=tuple(load_reports),
            duration_s=deps.clock() - started,
        )
        totals = result.totals()
        deps.event(
            Severity.INFO,
            "run summary",
            " ".join(f"{k}={v}" for k, v in sorted(totals.items())),
            run_date=run_date.isoformat(),
            **totals,
        )
        if run_log is not None:
            run_log.parent.mkdir(parents=True, exist_ok=True)
            with run_log.open("a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {
                            "run_date": run_date.isoformat(),
                            "session": session.isoformat(),
                            "duration_s": round(result.duration_s, 6),
                            **totals,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return result
    finally:
        deps.run_lock.release()


def next_tick_after(ts: float, at: dtime, tz: ZoneInfo) -> float:
    """Epoch seconds of the first wall-clock `at` strictly after `ts`."""
    local = datetime.fromtimestamp(ts, tz)
    candidate = datetime.combine(local.date(), at, tzinfo=tz)
    while candidate.timestamp() <= ts:
        candidate = datetime.combine(candidate.date() + timedelta(days=1), at, tzinfo=tz)
    return candidate.timestamp()


def schedule_loop(
    tick: Callable[[date], object],
    at: dtime,
    tz: ZoneInfo,
    deps: RunDeps,
    stop: threading.Event,
    poll_s: float = 30.0,
) -> int:
    """Run `tick` once per scheduled wall-clock time until stopped.

    If a tick's work overruns past later scheduled times, those ticks are
    skipped with a warning rather than run concurrently or back to back.
    Returns the number of completed runs (the daemon loops until signaled).
    """
    runs = 0
    next_tick = next_tick_after(deps.clock(), at, tz)
    while not stop.is_set():
        now = deps.clock()
        if now < next_tick:
            deps.sleep(min(next_tick - now, poll_s))
            continue
        run_date = datetime.fromtimestamp(next_tick, tz).date()
        try:
            tick(run_date)
        except Exception as exc:
            deps.event(
                Severity.ERROR,
                "scheduled run failed",
                f"{run_date.isoformat()}: {exc}",
                run_date=run_date.isoformat(),
            )
        runs += 1
        next_tick = next_tick_after(next_tick, at, tz)
        while next_tick <= deps.clock():
            deps.event(
                Severity.WARNING,
                "tick skipped",
                f"run overran past {datetime.fromtimestamp(next_tick, tz).isoformat()}",
            )
            next_tick = next_tick_after(next_tick, at, tz)
    return runs
