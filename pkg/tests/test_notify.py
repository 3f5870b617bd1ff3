from __future__ import annotations

import io
import json

from marketflow.notify import (
    LogFileSink,
    NotificationEvent,
    Notifier,
    Severity,
    StderrSink,
    WebhookSink,
)

EVENT = NotificationEvent(
    occurred_at=1_659_360_600,
    severity=Severity.WARNING,
    subject="gap detected",
    body="AAPL@15min missing 2 slots",
    context={"symbol": "AAPL"},
)


class TestEvent:
    def test_json_is_one_canonical_line(self):
        payload = json.loads(EVENT.to_json())
        assert payload == {
            "occurred_at": 1_659_360_600,
            "severity": "warning",
            "subject": "gap detected",
            "body": "AAPL@15min missing 2 slots",
            "context": {"symbol": "AAPL"},
        }
        assert "\n" not in EVENT.to_json()

    def test_defaults(self):
        e = NotificationEvent(occurred_at=0, severity=Severity.INFO, subject="hi")
        assert e.body == ""
        assert e.context == {}


class TestLogFileSink:
    def test_appends_one_line_per_event(self, tmp_path):
        path = tmp_path / "logs" / "notifications.log"
        sink = LogFileSink(path)
        sink.emit(EVENT)
        sink.emit(EVENT)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert first["severity"] == "warning"
        assert first["subject"] == "gap detected"

    def test_creates_parent_directories(self, tmp_path):
        sink = LogFileSink(tmp_path / "a" / "b" / "events.log")
        sink.emit(EVENT)
        assert sink.path.exists()


class TestStderrSink:
    def test_formats_severity_and_subject(self):
        stream = io.StringIO()
        StderrSink(stream, min_severity=Severity.INFO).emit(EVENT)
        assert stream.getvalue() == "[WARNING] gap detected: AAPL@15min missing 2 slots\n"

    def test_default_threshold_drops_info(self):
        stream = io.StringIO()
        sink = StderrSink(stream)
        sink.emit(NotificationEvent(occurred_at=0, severity=Severity.INFO, subject="quiet"))
        assert stream.getvalue() == ""
        sink.emit(NotificationEvent(occurred_at=0, severity=Severity.ERROR, subject="loud"))
        assert "[ERROR] loud" in stream.getvalue()


class _FakeResponse:
    def __init__(self, status_code):
        self.status_code = status_code


class _FakeHttp:
    def __init__(self, status_code=200, error=None):
        self.status_code = status_code
        self.error = error
        self.posts = []

    def post(self, url, data=None, headers=None, timeout=None):
        if self.error is not None:
            raise self.error
        self.posts.append((url, data, headers))
        return _FakeResponse(self.status_code)


class TestWebhookSink:
    def test_posts_event_json(self):
        http = _FakeHttp()
        WebhookSink("https://hooks.example/etl", session=http).emit(EVENT)
        url, data, headers = http.posts[0]
        assert url == "https://hooks.example/etl"
        assert json.loads(data) == json.loads(EVENT.to_json())
        assert headers["Content-Type"] == "application/json"

    def test_http_error_status_raises(self):
        http = _FakeHttp(status_code=500)
        try:
            WebhookSink("https://hooks.example/etl", session=http).emit(EVENT)
        except RuntimeError as exc:
            assert "500" in str(exc)
        else:
            raise AssertionError("expected RuntimeError")


class TestNotifier:
    def test_reports_per_sink_success(self, tmp_path):
        log = LogFileSink(tmp_path / "n.log")
        dead = WebhookSink("https://hooks.example/etl",
                           session=_FakeHttp(error=ConnectionError("refused")))
        results = Notifier([log, dead]).notify(EVENT)
        assert results == {"logfile": True, "webhook": False}
        assert (tmp_path / "n.log").exists()

    def test_sink_failure_never_raises(self):
        dead = WebhookSink("https://x", session=_FakeHttp(error=RuntimeError("boom")))
        notifier = Notifier([dead])
        assert notifier.notify(EVENT) == {"webhook": False}
        assert notifier.journal == [EVENT]

    def test_journal_filters_by_severity(self):
        notifier = Notifier()
        info = NotificationEvent(occurred_at=1, severity=Severity.INFO, subject="a")
        error = NotificationEvent(occurred_at=2, severity=Severity.ERROR, subject="b")
        notifier.notify(info)
        notifier.notify(error)
        assert notifier.events() == [info, error]
        assert notifier.events(Severity.ERROR) == [error]
        assert notifier.events(Severity.WARNING) == []
