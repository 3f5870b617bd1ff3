from __future__ import annotations

import textwrap
from pathlib import Path

import pytest

from marketflow.model import TradingCalendar

import corpus


@pytest.fixture(scope="session")
def cal() -> TradingCalendar:
    return TradingCalendar()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, cal) -> Path:
    d = tmp_path_factory.mktemp("fixtures-clean")
    corpus.write_corpus(d, cal)
    return d


@pytest.fixture(scope="session")
def gap_corpus_dir(tmp_path_factory, cal) -> Path:
    d = tmp_path_factory.mktemp("fixtures-gapped")
    omit = corpus.planted_omissions(cal, corpus.PLANTED_GAPS)
    corpus.write_corpus(d, cal, omit)
    corpus.write_backfill_fixtures(d, cal)
    return d


PLANS_YAML = """
plans:
  - name: sde_min15
    type: SDE
    source: staging
    interval: 15min
    symbols: [AAPL, AMZN, GOOG, MSFT, TSLA]
    from: 2022-08-01
    to: 2022-09-09
  - name: sil_min15
    type: SIL
    interval: 15min
    symbols: [AAPL, AMZN, GOOG, MSFT, TSLA]
    from: 2022-08-01
    to: 2022-09-09
  - name: plp_daily
    type: PLP
    interval: 15min
    symbols: [AAPL, AMZN, GOOG, MSFT, TSLA]
    from: 2022-08-01
    to: 2022-09-09
"""


def write_config(
    env_dir: Path,
    fixture_dir: Path,
    store_binding: str = "sqlite",
    with_plans: bool = True,
    extra: str = "",
) -> Path:
    """Lay out a replay-mode working directory and return the config path."""
    env_dir.mkdir(parents=True, exist_ok=True)
    (env_dir / "universe.txt").write_text(corpus.UNIVERSE_TEXT, encoding="utf-8")
    body = textwrap.dedent(
        f"""
        source:
          mode: replay
          fixture_dir: {fixture_dir}
        universe: universe.txt
        store:
          binding: {store_binding}
          path: staging.db
        warehouse:
          path: warehouse.db
        notifications:
          log_file: logs/notifications.log
          stderr: false
        run_log: logs/runs.log
        quarantine_log: logs/quarantine.jsonl
        """
    )
    if with_plans:
        body += PLANS_YAML
    if extra:
        body += textwrap.dedent(extra)
    cfg = env_dir / "marketflow.yaml"
    cfg.write_text(body, encoding="utf-8")
    return cfg


@pytest.fixture()
def replay_env(tmp_path, corpus_dir) -> Path:
    """Fresh working dir configured against the clean corpus."""
    return write_config(tmp_path / "env", corpus_dir)


@pytest.fixture()
def gap_replay_env(tmp_path, gap_corpus_dir) -> Path:
    return write_config(tmp_path / "env", gap_corpus_dir)
