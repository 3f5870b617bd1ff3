"""HTTP facade over the pipeline; the CLI binds the same library calls."""

from __future__ import annotations

from contextlib import asynccontextmanager
from dataclasses import replace
from datetime import date

from fastapi import FastAPI, HTTPException, Query, Response

from ..capacity import CapacityModel, storage_projection
from ..config import Config, Runtime, build_runtime
from ..model import Instrument, InstrumentKind, Interval, SeriesKey, daily_bar_ts, format_fixed
from ..orchestrator import JobState, backfill_pass, plan_for_session, run_jobs, scan_scope
from ..store import StorageError
from ..warehouse import UnknownPlan, UnresolvedSource
from .schemas import (
    BackfillResponse,
    BarModel,
    EstimateRequest,
    EstimateResponse,
    ExtractRequest,
    ExtractResponse,
    FactModel,
    GapReportModel,
    HealthResponse,
    JobReportModel,
    LoadReportModel,
    LoadRequest,
    RangeRequest,
    SeriesModel,
)


def _select(rt: Runtime, symbols: list[str] | None) -> list[Instrument]:
    if not symbols:
        return list(rt.cfg.universe)
    by_symbol = rt.cfg.instruments()
    wanted = [s.upper() for s in symbols]
    missing = [s for s in wanted if s not in by_symbol]
    if missing:
        raise HTTPException(status_code=404, detail=f"symbols not in universe: {missing}")
    return [by_symbol[s] for s in wanted]


def _scope(instruments: list[Instrument]) -> list[SeriesKey]:
    kinds = (InstrumentKind.STOCK, InstrumentKind.INDEX, InstrumentKind.COMMODITY)
    return [SeriesKey(i.symbol, Interval.MIN15) for i in instruments if i.kind in kinds]


def create_app(cfg: Config, verbose: bool = False) -> FastAPI:
    rt = build_runtime(cfg, verbose=verbose)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        rt.close()

    app = FastAPI(title="marketflow", version="0.1.0", lifespan=lifespan)
    app.state.runtime = rt

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", mode=cfg.mode, store=rt.deps.store.binding)

    @app.post("/extract", response_model=ExtractResponse)
    def extract(req: ExtractRequest) -> ExtractResponse:
        universe = _select(rt, req.symbols)
        jobs = plan_for_session(universe, cfg.cal, req.session)
        reports = run_jobs(jobs, rt.deps)
        return ExtractResponse(
            session=req.session,
            reports=[JobReportModel(**r.as_dict()) for r in reports],
            exhausted=[j.job_id for j in jobs if j.state is JobState.EXHAUSTED],
        )

    @app.post("/backfill", response_model=BackfillResponse)
    def backfill(req: RangeRequest) -> BackfillResponse:
        scope = _scope(_select(rt, req.symbols))
        report = backfill_pass(scope, (req.start, req.end), rt.deps)
        return BackfillResponse(
            gaps_before=report.gaps_before,
            jobs_issued=report.jobs_issued,
            residual=report.residual,
            reports=[JobReportModel(**r.as_dict()) for r in report.job_reports],
        )

    @app.get("/gaps", response_model=list[GapReportModel])
    def gaps(
        start: date = Query(alias="from"),
        end: date = Query(alias="to"),
        symbols: list[str] | None = Query(default=None),
    ) -> list[GapReportModel]:
        scope = _scope(_select(rt, symbols))
        return [GapReportModel(**r.as_dict()) for r in scan_scope(scope, (start, end), rt.deps)]

    @app.post("/warehouse-load", response_model=LoadReportModel)
    def warehouse_load(req: LoadRequest) -> LoadReportModel:
        try:
            plan = rt.plan(req.plan)
        except (UnknownPlan, ValueError) as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        wh = rt.open_warehouse()
        try:
            wh.upsert_dimensions(list(cfg.universe), plan.range)
            report = wh.run_load_plan(plan, {"staging": rt.deps.store})
        except (UnresolvedSource, StorageError) as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        finally:
            wh.close()
        return LoadReportModel(
            plan=report.plan,
            rows_read=report.rows_read,
            rows_loaded=report.rows_loaded,
            rows_rejected=report.rows_rejected,
            rows_ignored=report.rows_ignored,
            duration_s=report.duration_s,
        )

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest) -> EstimateResponse:
        try:
            model = replace(cfg.capacity, **req.overrides) if req.overrides else cfg.capacity
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        report = storage_projection(model)
        return EstimateResponse(**report.as_dict())

    @app.get("/series", response_model=list[SeriesModel])
    def series() -> list[SeriesModel]:
        out = []
        for key in rt.deps.store.list_series():
            extent = rt.deps.store.series_extent(key)
            out.append(
                SeriesModel(
                    symbol=key.symbol,
                    interval=key.interval.value,
                    count=extent.count,
                    min_ts=extent.min_ts,
                    max_ts=extent.max_ts,
                )
            )
        return out

    @app.get("/series/{symbol}/bars", response_model=list[BarModel])
    def bars(
        symbol: str,
        start: date = Query(alias="from"),
        end: date = Query(alias="to"),
        interval: Interval = Interval.MIN15,
    ) -> list[BarModel]:
        key = SeriesKey(symbol.upper(), interval)
        lo, hi = daily_bar_ts(start), daily_bar_ts(end) + 86_399
        return [
            BarModel(
                ts=b.ts,
                open=format_fixed(b.open),
                high=format_fixed(b.high),
                low=format_fixed(b.low),
                close=format_fixed(b.close),
                volume=b.volume,
            )
            for b in rt.deps.store.read_series(key, (lo, hi))
        ]

    @app.get("/facts", response_model=list[FactModel])
    def facts(
        start: date = Query(alias="from"),
        end: date = Query(alias="to"),
        symbols: list[str] | None = Query(default=None),
        interval: Interval | None = None,
    ) -> list[FactModel]:
        wh = rt.open_warehouse()
        try:
            rows = wh.query_facts(
                symbols=[s.upper() for s in symbols] if symbols else None,
                interval=interval,
                ts_range=(daily_bar_ts(start), daily_bar_ts(end) + 86_399),
            )
        finally:
            wh.close()
        return [
            FactModel(
                symbol=r.symbol,
                interval=r.interval.value,
                ts=r.ts,
                open=format_fixed(r.open),
                high=format_fixed(r.high),
                low=format_fixed(r.low),
                close=format_fixed(r.close),
                volume=r.volume,
            )
            for r in rows
        ]

    @app.get("/export/{symbol}")
    def export_csv(
        symbol: str,
        start: date = Query(alias="from"),
        end: date = Query(alias="to"),
        interval: Interval = Interval.MIN15,
    ) -> Response:
        from ..store import CSV_HEADER, format_bar_csv_row

        key = SeriesKey(symbol.upper(), interval)
        lo, hi = daily_bar_ts(start), daily_bar_ts(end) + 86_399
        bars = rt.deps.store.read_series(key, (lo, hi))
        body = CSV_HEADER + "\n" + "".join(format_bar_csv_row(b) + "\n" for b in bars)
        return Response(content=body, media_type="text/csv")

    return app
