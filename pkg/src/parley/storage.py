"""Flat data-capture records, a records-import client, and run directories."""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence
from urllib.parse import parse_qs

import httpx

from ._http import AuthError, ServiceError, send_with_retries
from .survey import (
    AnswerValue,
    Choice,
    MultiChoice,
    Numeric,
    Other,
    Question,
    Refused,
    ResponseSet,
    SurveyDefinition,
    canonical,
)

log = logging.getLogger(__name__)

FIELD_RE = re.compile(r"^q[0-9]{2}(___[a-z0-9_]+)?$|^q[0-9]{2}_other$|^record_id$")
REFUSED, OTHER = "REFUSED", "OTHER"
BATCH_SIZE = 100


class UploadRejected(ServiceError):
    """The server refused an import; ``str()`` is its error text, unchanged."""


@dataclass(frozen=True)
class StoredRecord:
    record_id: str
    fields: dict[str, str]

    def as_row(self) -> dict[str, str]:
        return {"record_id": self.record_id, **self.fields}


def field_name(q: Question) -> str:
    return f"q{q.index:02d}"


def decimal_string(value: float) -> str:
    """Plain decimal notation with trailing zeros trimmed (``2.50`` -> ``"2.5"``)."""
    text = format(Decimal(repr(float(value))), "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _flatten_answer(q: Question, a: AnswerValue) -> dict[str, str]:
    base = field_name(q)
    out: dict[str, str] = {}
    if q.kind == "multi_choice":
        chosen: frozenset[str] = frozenset()
        if isinstance(a, MultiChoice):
            chosen = a.codes
        elif isinstance(a, Choice):
            chosen = frozenset({a.code})
        for code in q.codes:
            out[f"{base}___{code}"] = "1" if code in chosen else "0"
        if isinstance(a, Refused):
            out[base] = REFUSED
    elif isinstance(a, Choice):
        out[base] = a.code
    elif isinstance(a, Numeric):
        out[base] = decimal_string(a.value)
    elif isinstance(a, Refused):
        out[base] = REFUSED
    if isinstance(a, Other):
        out[base] = OTHER
        if a.raw_text is not None:
            out[f"{base}_other"] = a.raw_text
    return out


def flatten(rs: ResponseSet, survey: SurveyDefinition, record_id: str | None = None) -> StoredRecord:
    fields: dict[str, str] = {}
    for q in survey.questions:
        fields.update(_flatten_answer(q, canonical(q, rs.answers[q.index])))
    return StoredRecord(record_id or rs.respondent_id, fields)


def unflatten(record: StoredRecord, survey: SurveyDefinition, respondent_id: str | None = None) -> ResponseSet:
    """Inverse of :func:`flatten` over canonical answers."""
    f = record.fields
    answers: dict[int, AnswerValue] = {}
    for q in survey.questions:
        base = field_name(q)
        value = f.get(base)
        if value == REFUSED:
            answers[q.index] = Refused()
        elif value == OTHER:
            answers[q.index] = Other(f.get(f"{base}_other"))
        elif q.kind == "multi_choice":
            chosen = [c for c in q.codes if f.get(f"{base}___{c}") == "1"]
            if len(chosen) == 1 and q.option(chosen[0]).is_special:
                answers[q.index] = Choice(chosen[0])
            else:
                answers[q.index] = MultiChoice(chosen)
        elif value is None:
            raise ValueError(f"record {record.record_id} has no value for {base}")
        elif q.kind == "numeric" and not q.has_code(value):
            answers[q.index] = Numeric(float(value))
        else:
            answers[q.index] = Choice(value)
    return ResponseSet(survey.id, respondent_id or record.record_id, answers)


# -- import client -----------------------------------------------------------


def _error_text(resp: httpx.Response) -> str:
    try:
        doc = resp.json()
    except ValueError:
        return resp.text
    if isinstance(doc, dict) and isinstance(doc.get("error"), str):
        return doc["error"]
    return resp.text


class RecordsClient:
    """Client for a REDCap-style records import endpoint (form-encoded POST)."""

    def __init__(
        self,
        url: str,
        token: str | None = None,
        token_env: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        batch_size: int = BATCH_SIZE,
        timeout_s: float = 60.0,
    ):
        if token is None and token_env:
            token = os.environ.get(token_env)
        if not token:
            raise ValueError("data-capture API token missing" + (f" (set ${token_env})" if token_env else ""))
        if not 1 <= batch_size <= BATCH_SIZE:
            raise ValueError(f"batch size must be within 1..{BATCH_SIZE}")
        self.url = url
        self._token = token
        self._sleep = sleep
        self.batch_size = batch_size
        self._client = httpx.Client(transport=transport, timeout=timeout_s)
        self._upload_lock = threading.Lock()

    def _import(self, rows: list[dict[str, str]]) -> int:
        form = {
            "token": self._token,
            "content": "record",
            "action": "import",
            "format": "json",
            "type": "flat",
            "overwriteBehavior": "normal",
            "data": json.dumps(rows, sort_keys=True),
            "returnContent": "count",
            "returnFormat": "json",
        }
        resp = send_with_retries(lambda: self._client.post(self.url, data=form), sleep=self._sleep)
        if resp.status_code in (401, 403):
            raise AuthError(resp.text)
        if resp.status_code >= 400:
            raise UploadRejected(_error_text(resp))
        try:
            return int(resp.json()["count"])
        except (ValueError, KeyError, TypeError):
            raise ServiceError(f"unexpected import response: {resp.text}") from None

    def upload(self, records: Sequence[StoredRecord]) -> int:
        """Import ``records`` in batches; returns the server-acknowledged count."""
        if not records:
            return 0
        total = 0
        with self._upload_lock:
            for start in range(0, len(records), self.batch_size):
                batch = [r.as_row() for r in records[start : start + self.batch_size]]
                total += self._import(batch)
        return total

    def close(self) -> None:
        self._client.close()


def upload(client: RecordsClient, records: Sequence[StoredRecord]) -> int:
    return client.upload(records)


class StubRecordsServer:
    """Local stand-in for a records-import endpoint, for tests and simulation.

    Checks the token, validates field names, stores rows keyed by record id
    (blank values never overwrite, as with ``overwriteBehavior=normal``) and
    answers ``{"count": n}``. Fields listed in ``reject_fields`` draw a 400
    response naming them.
    """

    def __init__(self, token: str, reject_fields: Iterable[str] = (), host: str = "127.0.0.1", port: int = 0):
        self.token = token
        self.reject_fields = set(reject_fields)
        self.records: dict[str, dict[str, str]] = {}
        self.requests: list[dict[str, str]] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, code: int, doc: Any) -> None:
                body = json.dumps(doc).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                raw = self.rfile.read(int(self.headers.get("Content-Length", 0))).decode()
                form = {k: v[0] for k, v in parse_qs(raw, keep_blank_values=True).items()}
                code, doc = stub.handle(form)
                self._reply(code, doc)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/api/"

    def handle(self, form: Mapping[str, str]) -> tuple[int, Any]:
        with self._lock:
            self.requests.append(dict(form))
        if form.get("token") != self.token:
            return 403, {"error": "You do not have permissions to use the API"}
        expected = {"content": "record", "action": "import", "format": "json", "type": "flat"}
        for k, v in expected.items():
            if form.get(k) != v:
                return 400, {"error": f"unsupported {k}: {form.get(k)!r}"}
        try:
            rows = json.loads(form.get("data", ""))
        except ValueError:
            return 400, {"error": "data is not valid JSON"}
        errors = []
        for row in rows:
            rid = row.get("record_id", "")
            for name in row:
                if not FIELD_RE.match(name):
                    errors.append(f'"{rid}","{name}","{row[name]}","This field does not exist"')
                elif name in self.reject_fields:
                    errors.append(f'"{rid}","{name}","{row[name]}","The value you provided is not valid"')
        if errors:
            return 400, {"error": "\n".join(errors)}
        with self._lock:
            for row in rows:
                stored = self.records.setdefault(row["record_id"], {})
                stored.update({k: v for k, v in row.items() if v != ""})
        return 200, {"count": len(rows)}

    def start(self) -> "StubRecordsServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "StubRecordsServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# -- run directories ---------------------------------------------------------

SUBDIRS = ("personas", "calls", "extractions", "reports")


def write_atomic(path: Path, data: str | bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, obj: Any) -> None:
    write_atomic(path, dump_json(obj))


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RunLayout:
    """Paths of one campaign's artifacts under ``runs/<campaign>/``."""

    root: Path

    @classmethod
    def for_campaign(cls, runs_dir: str | Path, campaign_id: str) -> "RunLayout":
        if not re.match(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$", campaign_id):
            raise ValueError(f"campaign id {campaign_id!r} is not a safe directory name")
        return cls(Path(runs_dir) / campaign_id)

    @property
    def survey(self) -> Path:
        return self.root / "survey.json"

    def dir(self, name: str) -> Path:
        return self.root / name

    def persona(self, record_id: str) -> Path:
        return self.root / "personas" / f"{record_id}.json"

    def call(self, record_id: str) -> Path:
        return self.root / "calls" / f"{record_id}.json"

    def extraction(self, record_id: str) -> Path:
        return self.root / "extractions" / f"{record_id}.json"

    def report(self, name: str) -> Path:
        return self.root / "reports" / name

    def create(self) -> "RunLayout":
        self.root.mkdir(parents=True, exist_ok=True)
        for name in SUBDIRS:
            (self.root / name).mkdir(exist_ok=True)
        return self


def persist_run(
    campaign_id: str,
    artifacts: Mapping[str, Any],
    runs_dir: str | Path = "runs",
) -> Path:
    """Write ``artifacts`` (relative path -> text or JSON-able object) into the
    campaign directory, creating the standard layout first."""
    layout = RunLayout.for_campaign(runs_dir, campaign_id).create()
    for rel, content in sorted(artifacts.items()):
        target = (layout.root / rel).resolve()
        if layout.root.resolve() not in target.parents:
            raise ValueError(f"artifact path {rel!r} escapes the campaign directory")
        target.parent.mkdir(parents=True, exist_ok=True)
        write_atomic(target, content if isinstance(content, (str, bytes)) else dump_json(content))
    return layout.root
