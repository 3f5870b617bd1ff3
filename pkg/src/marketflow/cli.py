"""Operator command line: every command is a thin binding over the library.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import json
import signal
import sys
import threading
from dataclasses import fields as dc_fields, replace
from datetime import date
from pathlib import Path
from zoneinfo import ZoneInfo

import click

from .capacity import CapacityModel, storage_projection
from .config import Config, ConfigError, Runtime, build_runtime, parse_and_validate_config
from .model import Instrument, InstrumentKind, Interval, SeriesKey, daily_bar_ts
from .orchestrator import (
    JobState,
    backfill_pass,
    plan_for_session,
    run_jobs,
    run_pipeline,
    scan_scope,
    schedule_loop,
)
from .store import SinkError, StorageError, export_filename, export_flat
from .warehouse import UnknownPlan, UnresolvedSource


class CliState:
    def __init__(self, config_path: str, replay: bool, verbose: bool):
        self.config_path = config_path
        self.replay = replay
        self.verbose = verbose


def _load_config(state: CliState) -> Config:
    try:
        return parse_and_validate_config(state.config_path, force_replay=state.replay)
    except ConfigError as exc:
        for finding in exc.findings:
            click.echo(f"config error: {finding}", err=True)
        sys.exit(2)


def _runtime(state: CliState) -> Runtime:
    return build_runtime(_load_config(state), verbose=state.verbose)


def _parse_date(value: str, label: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise click.UsageError(f"{label}: expected YYYY-MM-DD, got {value!r}")


def _select_instruments(cfg: Config, symbols: tuple[str, ...]) -> list[Instrument]:
    if not symbols:
        return list(cfg.universe)
    wanted = [s.upper() for s in symbols]
    by_symbol = cfg.instruments()
    missing = [s for s in wanted if s not in by_symbol]
    if missing:
        raise click.ClickException(f"symbols not in universe: {', '.join(missing)}")
    return [by_symbol[s] for s in wanted]


def _series_scope(instruments: list[Instrument], interval: Interval) -> list[SeriesKey]:
    kinds = (InstrumentKind.STOCK, InstrumentKind.INDEX, InstrumentKind.COMMODITY)
    return [SeriesKey(i.symbol, interval) for i in instruments if i.kind in kinds]


@click.group()
@click.option("--config", "config_path", default="marketflow.yaml", show_default=True,
              help="Path to the YAML configuration file.")
@click.option("--replay", is_flag=True, help="Force the replay (fixture) source.")
@click.option("--verbose", is_flag=True, help="Echo info-level notifications to stderr.")
@click.pass_context
def main(ctx: click.Context, config_path: str, replay: bool, verbose: bool) -> None:
    """Market data pipeline: extract, validate, store, warehouse, export."""
    ctx.obj = CliState(config_path, replay, verbose)


@main.command()
@click.pass_obj
def init(state: CliState) -> None:
    """Create the staging store and warehouse schemas."""
    rt = _runtime(state)
    try:
        wh = rt.open_warehouse()
        stats = wh.upsert_dimensions(list(rt.cfg.universe), (date.today(), date.today()))
        wh.close()
    except StorageError as exc:
        raise click.ClickException(str(exc))
    finally:
        rt.close()
    click.echo(
        json.dumps(
            {
                "store": str(rt.cfg.store_path) if rt.cfg.store_path else "memory",
                "warehouse": str(rt.cfg.warehouse_path),
                "instruments": stats.created_instruments + stats.updated_instruments,
            }
        )
    )


@main.command()
@click.option("--date", "day", required=True, help="Trading session to extract (YYYY-MM-DD).")
@click.option("--symbols", multiple=True, help="Restrict to these symbols.")
@click.pass_obj
def extract(state: CliState, day: str, symbols: tuple[str, ...]) -> None:
    """Fetch, conform, and store one session of data."""
    session = _parse_date(day, "--date")
    rt = _runtime(state)
    try:
        universe = _select_instruments(rt.cfg, symbols)
        jobs = plan_for_session(universe, rt.cfg.cal, session)
        reports = run_jobs(jobs, rt.deps)
        exhausted = [j.job_id for j in jobs if j.state is JobState.EXHAUSTED]
        click.echo(
            json.dumps(
                {
                    "session": session.isoformat(),
                    "reports": [r.as_dict() for r in reports],
                    "exhausted": exhausted,
                }
            )
        )
        if exhausted:
            sys.exit(1)
    finally:
        rt.close()


@main.command()
@click.option("--from", "start", required=True, help="Range start (YYYY-MM-DD).")
@click.option("--to", "end", required=True, help="Range end (YYYY-MM-DD).")
@click.option("--symbols", multiple=True, help="Restrict to these symbols.")
@click.pass_obj
def backfill(state: CliState, start: str, end: str, symbols: tuple[str, ...]) -> None:
    """Detect gaps over a range and refetch the gapped sessions."""
    a, b = _parse_date(start, "--from"), _parse_date(end, "--to")
    rt = _runtime(state)
    try:
        universe = _select_instruments(rt.cfg, symbols)
        scope = _series_scope(universe, Interval.MIN15)
        report = backfill_pass(scope, (a, b), rt.deps)
        click.echo(
            json.dumps(
                {
                    "gaps_before": report.gaps_before,
                    "jobs_issued": report.jobs_issued,
                    "residual": report.residual,
                    "reports": [r.as_dict() for r in report.job_reports],
                }
            )
        )
    finally:
        rt.close()


@main.command()
@click.option("--from", "start", required=True, help="Range start (YYYY-MM-DD).")
@click.option("--to", "end", required=True, help="Range end (YYYY-MM-DD).")
@click.option("--symbols", multiple=True, help="Restrict to these symbols.")
@click.pass_obj
def gaps(state: CliState, start: str, end: str, symbols: tuple[str, ...]) -> None:
    """Print gap reports for the range as JSON."""
    a, b = _parse_date(start, "--from"), _parse_date(end, "--to")
    rt = _runtime(state)
    try:
        universe = _select_instruments(rt.cfg, symbols)
        scope = _series_scope(universe, Interval.MIN15)
        reports = scan_scope(scope, (a, b), rt.deps)
        click.echo(json.dumps([r.as_dict() for r in reports]))
    finally:
        rt.close()


@main.command("warehouse-load")
@click.option("--plan", "plan_name", required=True, help="Name of a configured load plan.")
@click.pass_obj
def warehouse_load(state: CliState, plan_name: str) -> None:
    """Run one configured load plan against the warehouse."""
    rt = _runtime(state)
    try:
        plan = rt.plan(plan_name)
        wh = rt.open_warehouse()
        try:
            wh.upsert_dimensions(list(rt.cfg.universe), plan.range)
            report = wh.run_load_plan(plan, {"staging": rt.deps.store})
        finally:
            wh.close()
        click.echo(
            json.dumps(
                {
                    "plan": report.plan,
                    "rows_read": report.rows_read,
                    "rows_loaded": report.rows_loaded,
                    "rows_rejected": report.rows_rejected,
                    "rows_ignored": report.rows_ignored,
                }
            )
        )
    except (UnknownPlan, UnresolvedSource) as exc:
        raise click.ClickException(f"plan: {exc}")
    except (ValueError, StorageError) as exc:
        raise click.ClickException(str(exc))
    finally:
        rt.close()


@main.command()
@click.option("--symbols", multiple=True, required=True, help="Symbols to export.")
@click.option("--from", "start", required=True, help="Range start (YYYY-MM-DD).")
@click.option("--to", "end", required=True, help="Range end (YYYY-MM-DD).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--interval", default="15min", show_default=True,
              type=click.Choice([i.value for i in Interval]))
@click.pass_obj
def export(state: CliState, symbols: tuple[str, ...], start: str, end: str,
           out_dir: str, interval: str) -> None:
    """Write one CSV file per symbol from the staging store."""
    a, b = _parse_date(start, "--from"), _parse_date(end, "--to")
    rt = _runtime(state)
    try:
        universe = _select_instruments(rt.cfg, symbols)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lo, hi = daily_bar_ts(a), daily_bar_ts(b) + 86_399
        results = []
        for inst in universe:
            key = SeriesKey(inst.symbol, Interval(interval))
            target = out / export_filename(inst.symbol, inst.kind, a, b)
            try:
                with target.open("wb") as fh:
                    stats = export_flat(rt.deps.store, key, (lo, hi), fh)
            except (SinkError, StorageError) as exc:
                raise click.ClickException(str(exc))
            results.append({"file": str(target), "rows": stats.rows, "bytes": stats.bytes})
        click.echo(json.dumps(results))
    finally:
        rt.close()


def _apply_overrides(model: CapacityModel, pairs: tuple[str, ...]) -> CapacityModel:
    valid = {f.name for f in dc_fields(CapacityModel)}
    overrides: dict[str, int | float] = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        if not _ or key not in valid:
            raise click.UsageError(
                f"--set expects field=value with field one of: {', '.join(sorted(valid))}"
            )
        try:
            overrides[key] = int(value)
        except ValueError:
            try:
                overrides[key] = float(value)
            except ValueError:
                raise click.UsageError(f"--set {key}: {value!r} is not a number")
    try:
        return replace(model, **overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc))


@main.command()
@click.option("--set", "overrides", multiple=True, metavar="FIELD=VALUE",
              help="Override a capacity model field.")
@click.option("--json", "as_json", is_flag=True, help="Emit the report as JSON.")
@click.pass_obj
def estimate(state: CliState, overrides: tuple[str, ...], as_json: bool) -> None:
    """Print the throughput and storage projection."""
    model = CapacityModel()
    if Path(state.config_path).is_file():
        model = _load_config(state).capacity
    model = _apply_overrides(model, overrides)
    report = storage_projection(model)
    if as_json:
        click.echo(json.dumps(report.as_dict(), indent=2))
    else:
        click.echo(report.as_table())


@main.command()
@click.pass_obj
def daemon(state: CliState) -> None:
    """Run the scheduled pipeline until signaled (SIGINT/SIGTERM)."""
    rt = _runtime(state)
    cfg = rt.cfg
    stop = threading.Event()

    def _handle(_sig, _frame):
        stop.set()

    signal.signal(signal.SIGINT, _handle)
    signal.signal(signal.SIGTERM, _handle)

    wh = rt.open_warehouse()

    def tick(run_date: date) -> None:
        from .model import previous_trading_day

        session = previous_trading_day(cfg.cal, run_date)
        plans = [
            spec.materialize(list(cfg.universe), (session, session))
            for spec in cfg.plan_specs
        ]
        run_pipeline(
            rt.deps,
            list(cfg.universe),
            run_date,
            warehouse=wh,
            plans=plans,
            plan_sources={"staging": rt.deps.store},
            run_log=cfg.run_log,
        )

    try:
        schedule_loop(
            tick,
            cfg.schedule_at,
            ZoneInfo(cfg.schedule_tz),
            rt.deps,
            stop,
        )
    finally:
        wh.close()
        rt.close()


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.pass_obj
def serve(state: CliState, host: str, port: int) -> None:
    """Serve the pipeline as an HTTP API."""
    import uvicorn

    from .service import create_app

    cfg = _load_config(state)
    uvicorn.run(create_app(cfg, verbose=state.verbose), host=host, port=port)


if __name__ == "__main__":
    main()
