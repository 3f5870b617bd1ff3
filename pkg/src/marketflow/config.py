"""Declarative configuration: one YAML file plus a universe file.

Validation collects every finding before failing so an operator fixes a
bad config in one round trip, not one error at a time. Exactly one source
mode (live or replay) is active per invocation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields as dc_fields, replace
from datetime import date, time as dtime
from pathlib import Path
from typing import Mapping

import yaml

from .capacity import CapacityModel
from .model import (
    Instrument,
    InstrumentKind,
    Interval,
    SeriesKey,
    TradingCalendar,
    UnknownTimezone,
)
from .notify import LogFileSink, Notifier, Severity, Sink, StderrSink, WebhookSink
from .warehouse import LoadPlan, PlanType, UnknownPlan, Warehouse

DEFAULT_API_KEY_ENV = "MARKETFLOW_API_KEY"


class ConfigError(Exception):
    """Carries every validation finding, not just the first."""

    def __init__(self, findings: list[str]):
        self.findings = findings
        super().__init__("; ".join(findings))


@dataclass(frozen=True)
class PlanSpec:
    """A load plan as configured; the date range may be left open and bound
    at run time (the daemon binds it to the session being processed)."""

    name: str
    plan_type: PlanType
    source_instance: str
    interval: Interval
    symbols: tuple[str, ...]
    range: tuple[date, date] | None
    description: str | None = None

    def materialize(
        self, universe: list[Instrument], default_range: tuple[date, date]
    ) -> LoadPlan:
        symbols = self.symbols or tuple(
            i.symbol
            for i in universe
            if i.kind in (InstrumentKind.STOCK, InstrumentKind.INDEX, InstrumentKind.COMMODITY)
        )
        return LoadPlan(
            name=self.name,
            plan_type=self.plan_type,
            source_instance=self.source_instance,
            scope=frozenset(SeriesKey(s, self.interval) for s in symbols),
            range=self.range if self.range is not None else default_range,
            description=self.description,
        )


@dataclass(frozen=True)
class Config:
    mode: str
    base_url: str | None
    api_key_env: str
    api_key: str | None
    fixture_dir: Path | None
    universe_file: Path
    universe: tuple[Instrument, ...]
    cal: TradingCalendar
    store_binding: str
    store_path: Path | None
    warehouse_path: Path
    schedule_at: dtime
    schedule_tz: str
    log_file: Path
    stderr_enabled: bool
    webhook_url: str | None
    run_log: Path
    quarantine_log: Path
    capacity: CapacityModel
    plan_specs: tuple[PlanSpec, ...] = ()
    max_workers: int = 4

    def build_notifier(self, verbose: bool = False) -> Notifier:
        sinks: list[Sink] = [LogFileSink(self.log_file)]
        if self.stderr_enabled:
            level = Severity.INFO if verbose else Severity.WARNING
            sinks.append(StderrSink(min_severity=level))
        if self.webhook_url:
            sinks.append(WebhookSink(self.webhook_url))
        return Notifier(sinks)

    def instruments(self) -> dict[str, Instrument]:
        return {i.symbol: i for i in self.universe}


def parse_universe(text: str) -> list[Instrument]:
    """One instrument per line: SYMBOL[,kind[,sector[,industry]]].

    Blank lines and '#' comments are ignored. Unknown kinds and malformed
    symbols raise ValueError naming the offending line.
    """
    out: list[Instrument] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        symbol = parts[0].upper()
        kind = InstrumentKind.STOCK
        if len(parts) > 1 and parts[1]:
            try:
                kind = InstrumentKind(parts[1].lower())
            except ValueError:
                raise ValueError(f"line {lineno}: unknown kind {parts[1]!r}") from None
        sector = parts[2] if len(parts) > 2 else ""
        industry = parts[3] if len(parts) > 3 else ""
        try:
            out.append(
                Instrument(symbol=symbol, name=symbol, sector=sector, industry=industry, kind=kind)
            )
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def _parse_time(value: object, findings: list[str], label: str) -> dtime:
    try:
        h, m = str(value).split(":")
        return dtime(int(h), int(m))
    except (ValueError, AttributeError):
        findings.append(f"{label}: expected HH:MM, got {value!r}")
        return dtime(0, 0)


def _parse_date(value: object, findings: list[str], label: str) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        findings.append(f"{label}: expected YYYY-MM-DD, got {value!r}")
        return date(1970, 1, 1)


def _parse_calendar(section: Mapping, findings: list[str]) -> TradingCalendar:
    cal = TradingCalendar()
    kwargs: dict = {}
    if "timezone" in section:
        kwargs["timezone"] = str(section["timezone"])
    if "session_open" in section:
        kwargs["session_open"] = _parse_time(section["session_open"], findings, "calendar.session_open")
    if "session_close" in section:
        kwargs["session_close"] = _parse_time(section["session_close"], findings, "calendar.session_close")
    if "slot_minutes" in section:
        kwargs["slot_seconds"] = int(section["slot_minutes"]) * 60
    if "weekmask" in section:
        kwargs["weekmask"] = frozenset(int(d) for d in section["weekmask"])
    if "holidays" in section:
        kwargs["holidays"] = frozenset(
            _parse_date(h, findings, "calendar.holidays") for h in section["holidays"]
        )
    try:
        cal = replace(cal, **kwargs)
    except ValueError as exc:
        findings.append(f"calendar: {exc}")
        return TradingCalendar()
    try:
        cal.zone
    except UnknownTimezone as exc:
        findings.append(f"calendar.timezone: {exc}")
        return TradingCalendar()
    return cal


def _parse_capacity(section: Mapping, findings: list[str]) -> CapacityModel:
    valid = {f.name for f in dc_fields(CapacityModel)}
    kwargs = {}
    for k, v in section.items():
        if k not in valid:
            findings.append(f"capacity.{k}: unknown field")
            continue
        kwargs[k] = v
    try:
        return CapacityModel(**kwargs)
    except (TypeError, ValueError) as exc:
        findings.append(f"capacity: {exc}")
        return CapacityModel()


def _parse_plans(section: object, findings: list[str]) -> tuple[PlanSpec, ...]:
    if not isinstance(section, list):
        findings.append("plans: expected a list")
        return ()
    specs = []
    for i, item in enumerate(section):
        label = f"plans[{i}]"
        if not isinstance(item, dict):
            findings.append(f"{label}: expected a mapping")
            continue
        try:
            plan_type = PlanType(str(item.get("type", "")).upper())
        except ValueError:
            findings.append(f"{label}.type: expected one of SDE, SIL, PLP")
            continue
        name = str(item.get("name", ""))
        if not name:
            findings.append(f"{label}.name: required")
            continue
        try:
            interval = Interval(str(item.get("interval", "15min")))
        except ValueError:
            findings.append(f"{label}.interval: expected 15min or daily")
            continue
        rng = None
        if "from" in item or "to" in item:
            if not ("from" in item and "to" in item):
                findings.append(f"{label}: from/to must be given together")
                continue
            rng = (
                _parse_date(item["from"], findings, f"{label}.from"),
                _parse_date(item["to"], findings, f"{label}.to"),
            )
        specs.append(
            PlanSpec(
                name=name,
                plan_type=plan_type,
                source_instance=str(item.get("source", "staging")),
                interval=interval,
                symbols=tuple(str(s).upper() for s in item.get("symbols", [])),
                range=rng,
                description=item.get("description"),
            )
        )
    return tuple(specs)


def parse_and_validate_config(
    path: str | Path,
    env: Mapping[str, str] | None = None,
    force_replay: bool = False,
) -> Config:
    """Load and validate; raises ConfigError listing ALL findings."""
    env = env if env is not None else os.environ
    path = Path(path)
    findings: list[str] = []
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"invalid YAML: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])

    base = path.parent

    def resolve(p: object) -> Path:
        candidate = Path(str(p))
        return candidate if candidate.is_absolute() else base / candidate

    source = raw.get("source", {}) or {}
    mode = str(source.get("mode", "live")).lower()
    if force_replay:
        mode = "replay"
    if mode not in ("live", "replay"):
        findings.append(f"source.mode: expected live or replay, got {mode!r}")

    base_url = source.get("base_url")
    api_key_env = str(source.get("api_key_env", DEFAULT_API_KEY_ENV))
    fixture_dir = resolve(source["fixture_dir"]) if "fixture_dir" in source else None

    api_key = None
    if mode == "live":
        if not base_url:
            findings.append("source.base_url: required in live mode")
        api_key = env.get(api_key_env)
        if not api_key:
            findings.append(f"source.api_key_env: environment variable {api_key_env} is not set")
    if mode == "replay":
        if fixture_dir is None:
            findings.append("source.fixture_dir: required in replay mode")
        elif not fixture_dir.is_dir():
            findings.append(f"source.fixture_dir: {fixture_dir} is not a directory")

    universe_file = resolve(raw.get("universe", "universe.txt"))
    universe: list[Instrument] = []
    if not universe_file.is_file():
        findings.append(f"universe: {universe_file} does not exist")
    else:
        try:
            universe = parse_universe(universe_file.read_text(encoding="utf-8"))
        except ValueError as exc:
            findings.append(f"universe: {exc}")
        if not universe and not findings:
            findings.append(f"universe: {universe_file} lists no instruments")

    cal = _parse_calendar(raw.get("calendar", {}) or {}, findings)

    store = raw.get("store", {}) or {}
    store_binding = str(store.get("binding", "sqlite")).lower()
    if store_binding not in ("sqlite", "memory"):
        findings.append(f"store.binding: expected sqlite or memory, got {store_binding!r}")
    store_path = resolve(store.get("path", "staging.db")) if store_binding == "sqlite" else None

    warehouse_path = resolve((raw.get("warehouse", {}) or {}).get("path", "warehouse.db"))

    schedule = raw.get("schedule", {}) or {}
    schedule_at = _parse_time(schedule.get("at", "06:00"), findings, "schedule.at")
    schedule_tz = str(schedule.get("timezone", cal.timezone))

    notifications = raw.get("notifications", {}) or {}
    log_file = resolve(notifications.get("log_file", "notifications.log"))
    stderr_enabled = bool(notifications.get("stderr", True))
    webhook_url = notifications.get("webhook")

    capacity = _parse_capacity(raw.get("capacity", {}) or {}, findings)
    plan_specs = _parse_plans(raw.get("plans", []), findings) if "plans" in raw else ()

    max_workers = int(raw.get("max_workers", 4))
    if max_workers < 1:
        findings.append("max_workers: must be at least 1")

    if findings:
        raise ConfigError(findings)
    return Config(
        mode=mode,
        base_url=str(base_url) if base_url else None,
        api_key_env=api_key_env,
        api_key=api_key,
        fixture_dir=fixture_dir,
        universe_file=universe_file,
        universe=tuple(universe),
        cal=cal,
        store_binding=store_binding,
        store_path=store_path,
        warehouse_path=warehouse_path,
        schedule_at=schedule_at,
        schedule_tz=schedule_tz,
        log_file=log_file,
        stderr_enabled=stderr_enabled,
        webhook_url=str(webhook_url) if webhook_url else None,
        run_log=resolve(raw.get("run_log", "runs.log")),
        quarantine_log=resolve(raw.get("quarantine_log", "quarantine.jsonl")),
        capacity=capacity,
        plan_specs=plan_specs,
        max_workers=max_workers,
    )


@dataclass
class Runtime:
    """A configured pipeline ready to run; owns the store connection."""

    cfg: Config
    notifier: Notifier
    deps: "RunDeps"

    def open_warehouse(self) -> Warehouse:
        self.cfg.warehouse_path.parent.mkdir(parents=True, exist_ok=True)
        return Warehouse(self.cfg.warehouse_path, self.cfg.cal)

    def plan(self, name: str, default_range: tuple[date, date] | None = None) -> LoadPlan:
        for spec in self.cfg.plan_specs:
            if spec.name == name:
                if spec.range is None and default_range is None:
                    raise ValueError(f"plan {name} has no date range configured")
                return spec.materialize(list(self.cfg.universe), default_range or spec.range)
        raise UnknownPlan(name)

    def close(self) -> None:
        self.deps.store.close()


def build_runtime(cfg: Config, verbose: bool = False) -> Runtime:
    """Bind config to concrete source, limiter, store, and notifier.

    Replay mode nulls out sleeping: fixtures are read offline, so waiting
    on rate-limiter or retry wall time would only slow tests down.
    """
    from .gateway import LiveSource, RateLimiter, ReplaySource
    from .orchestrator import RunDeps
    from .store import open_store

    notifier = cfg.build_notifier(verbose=verbose)
    if cfg.mode == "replay":
        source = ReplaySource(cfg.fixture_dir)
    else:
        source = LiveSource(cfg.base_url, cfg.api_key)
    limiter = RateLimiter(capacity=cfg.capacity.rate_per_min, daily_cap=cfg.capacity.daily_cap)
    if cfg.store_path is not None:
        cfg.store_path.parent.mkdir(parents=True, exist_ok=True)
    store = open_store(cfg.store_binding, cfg.store_path)
    deps = RunDeps(
        source=source,
        limiter=limiter,
        store=store,
        cal=cfg.cal,
        instruments=cfg.instruments(),
        notifier=notifier,
        quarantine_log=cfg.quarantine_log,
        max_workers=cfg.max_workers,
    )
    if cfg.mode == "replay":
        deps.sleep = lambda _s: None
    return Runtime(cfg=cfg, notifier=notifier, deps=deps)
