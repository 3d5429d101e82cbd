"""Phone-agent side of the pipeline: prompt, gateways and an offline call simulator."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from typing import Any, Callable, Mapping

import httpx

from ._http import (
    NotFound,
    ServiceError,
    raise_for_client_error,
    send_with_retries,
)
from .survey import ResponseSet, SurveyDefinition
from .synth import render_fictitious_dialogue, rng_for
from .text import normalize_text
from .transcript import Transcript, Turn

log = logging.getLogger(__name__)

E164 = re.compile(r"^\+[1-9]\d{1,14}$")
STATUSES = ("queued", "dialing", "in_progress", "completed", "failed", "no_answer")
TERMINAL = frozenset({"completed", "failed", "no_answer"})
_RANK = {"queued": 0, "dialing": 1, "in_progress": 2, "completed": 3}


class InvalidPhone(ValueError):
    pass


class InconsistentPayload(ServiceError):
    pass


@dataclass(frozen=True)
class CallRequest:
    phone_number: str
    agent_prompt: str
    max_duration_s: int = 900
    voice_id: str | None = None
    webhook_url: str | None = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def check(self) -> "CallRequest":
        if not E164.match(self.phone_number or ""):
            raise InvalidPhone(f"not an E.164 phone number: {self.phone_number!r}")
        if not self.agent_prompt.strip():
            raise ValueError("agent prompt is empty")
        return self

    def idempotency_key(self) -> str:
        h = hashlib.sha256()
        for part in (self.phone_number, self.agent_prompt, json.dumps(dict(self.metadata), sort_keys=True)):
            h.update(part.encode())
            h.update(b"\0")
        return h.hexdigest()[:32]


@dataclass(frozen=True)
class CallSession:
    call_id: str
    status: str
    started_at: str | None = None
    ended_at: str | None = None
    transcript: Transcript | None = None
    recording_url: str | None = None
    cost_usd: float | None = None
    error: str | None = None
    # clean text of what was said, when known (simulator only)
    reference: Transcript | None = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InconsistentPayload(f"unknown call status {self.status!r}")
        if self.status == "completed" and self.transcript is None:
            raise InconsistentPayload(f"call {self.call_id} completed without a transcript")
        if self.status != "completed" and self.transcript is not None:
            raise InconsistentPayload(f"call {self.call_id} has a transcript while {self.status}")

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL

    def to_json(self) -> dict:
        doc: dict[str, Any] = {
            "call_id": self.call_id,
            "status": self.status,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "recording_url": self.recording_url,
            "cost_usd": self.cost_usd,
            "error": self.error,
            "metadata": dict(self.metadata),
            "turns": self.transcript.to_json() if self.transcript else None,
        }
        if self.reference is not None:
            doc["reference_turns"] = self.reference.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "CallSession":
        turns = doc.get("turns")
        ref = doc.get("reference_turns")
        return cls(
            call_id=doc["call_id"],
            status=doc["status"],
            started_at=doc.get("started_at"),
            ended_at=doc.get("ended_at"),
            transcript=Transcript.from_json(turns) if turns is not None else None,
            recording_url=doc.get("recording_url"),
            cost_usd=doc.get("cost_usd"),
            error=doc.get("error"),
            reference=Transcript.from_json(ref) if ref is not None else None,
            metadata=dict(doc.get("metadata") or {}),
        )


def check_transition(old: str, new: str) -> None:
    if old == new:
        return
    if old in TERMINAL:
        raise InconsistentPayload(f"status changed after terminal state: {old} -> {new}")
    if new in ("failed", "no_answer"):
        return
    if _RANK[new] < _RANK[old]:
        raise InconsistentPayload(f"illegal status transition {old} -> {new}")


# -- prompt ------------------------------------------------------------------


def _prompt_file(name: str) -> str:
    return resources.files("parley").joinpath(f"data/prompts/{name}").read_text("utf-8")


def build_agent_prompt(survey: SurveyDefinition) -> str:
    """Instruction prompt for the calling agent: persona header, numbered
    questions and, when the survey names one, a worked example dialogue."""
    header = _prompt_file("agent_header.txt").format(
        title=survey.title, purpose=survey.purpose or "to collect responses to the questions below"
    )
    lines = [header.rstrip("\n")]
    lines += [f"{q.index}. {q.prompt_text}" for q in survey.questions]
    if survey.agent_example:
        lines += ["", "Here is an example dialogue:", _prompt_file(survey.agent_example).rstrip("\n")]
    return "\n".join(lines) + "\n"


# -- gateways ----------------------------------------------------------------


class Gateway:
    """Dispatches calls and reports their progress.

    Subclasses implement ``_dispatch`` and ``_fetch``; this base keeps the
    registry of last-seen sessions that makes terminal states sticky and
    rejects backwards status moves.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._seen: dict[str, CallSession] = {}

    def dispatch(self, req: CallRequest) -> str:
        req.check()
        return self._dispatch(req)

    def poll(self, call_id: str) -> CallSession:
        with self._lock:
            last = self._seen.get(call_id)
        if last is not None and last.terminal:
            return last
        session = self._fetch(call_id)
        if last is not None:
            check_transition(last.status, session.status)
        with self._lock:
            self._seen[call_id] = session
        return session

    def _dispatch(self, req: CallRequest) -> str:
        raise NotImplementedError

    def _fetch(self, call_id: str) -> CallSession:
        raise NotImplementedError


def dispatch_call(gateway: Gateway, req: CallRequest) -> str:
    return gateway.dispatch(req)


def poll_session(gateway: Gateway, call_id: str) -> CallSession:
    return gateway.poll(call_id)


DEFAULT_STATUS_MAP = {
    "queued": "queued",
    "new": "queued",
    "dialing": "dialing",
    "ringing": "dialing",
    "in-progress": "in_progress",
    "in_progress": "in_progress",
    "started": "in_progress",
    "completed": "completed",
    "complete": "completed",
    "failed": "failed",
    "error": "failed",
    "no-answer": "no_answer",
    "no_answer": "no_answer",
    "busy": "no_answer",
}
AGENT_SPEAKERS = {"assistant", "agent", "ai", "bot"}
DEFAULT_FIELDS = {
    "status": "status",
    "transcripts": "transcripts",
    "speaker": "user",
    "text": "text",
    "created_at": "created_at",
    "recording_url": "recording_url",
    "price": "price",
    "call_id": "call_id",
    "started_at": "started_at",
    "ended_at": "end_at",
}


def _to_ms(value: Any) -> float:
    if isinstance(value, (int, float)):
        return float(value) * (1000.0 if value < 1e11 else 1.0)
    text = str(value).replace("Z", "+00:00")
    # fromisoformat on 3.10 wants exactly 3 or 6 fractional digits
    text = re.sub(r"\.(\d+)", lambda m: "." + (m.group(1) + "000000")[:6], text, count=1)
    try:
        return datetime.fromisoformat(text).timestamp() * 1000.0
    except ValueError:
        raise InconsistentPayload(f"unreadable timestamp {value!r}") from None


class HttpGateway(Gateway):
    """Client for a hosted conversational phone-agent service.

    Requests follow ``POST {base}/calls`` and ``GET {base}/calls/{id}``;
    remote field and status names can be remapped through ``fields`` and
    ``status_map``.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        api_key_env: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        fields: Mapping[str, str] | None = None,
        status_map: Mapping[str, str] | None = None,
        timeout_s: float = 30.0,
    ):
        super().__init__()
        if api_key is None and api_key_env:
            api_key = os.environ.get(api_key_env)
        if not api_key:
            raise ValueError("agent gateway credential missing"
                             + (f" (set ${api_key_env})" if api_key_env else ""))
        self.base_url = base_url.rstrip("/")
        self.fields = {**DEFAULT_FIELDS, **(fields or {})}
        self.status_map = {**DEFAULT_STATUS_MAP, **(status_map or {})}
        self._sleep = sleep
        self._client = httpx.Client(
            transport=transport, timeout=timeout_s, headers={"Authorization": api_key}
        )

    def _dispatch(self, req: CallRequest) -> str:
        body: dict[str, Any] = {
            "phone_number": req.phone_number,
            "task": req.agent_prompt,
            "max_duration": max(1, req.max_duration_s // 60),
        }
        if req.webhook_url:
            body["webhook"] = req.webhook_url
        if req.voice_id:
            body["voice"] = req.voice_id
        if req.metadata:
            body["metadata"] = dict(req.metadata)
        headers = {"Idempotency-Key": req.idempotency_key()}
        resp = send_with_retries(
            lambda: self._client.post(f"{self.base_url}/calls", json=body, headers=headers),
            sleep=self._sleep,
        )
        raise_for_client_error(resp)
        call_id = resp.json().get(self.fields["call_id"])
        if not call_id:
            raise InconsistentPayload(f"dispatch response lacks a call id: {resp.text}")
        return str(call_id)

    def _fetch(self, call_id: str) -> CallSession:
        resp = send_with_retries(
            lambda: self._client.get(f"{self.base_url}/calls/{call_id}"), sleep=self._sleep
        )
        raise_for_client_error(resp)
        return self.session_from_payload(call_id, resp.json())

    def session_from_payload(self, call_id: str, doc: Mapping[str, Any]) -> CallSession:
        f = self.fields
        raw_status = str(doc.get(f["status"], "")).lower()
        status = self.status_map.get(raw_status)
        if status is None:
            raise InconsistentPayload(f"unknown remote status {raw_status!r}")
        transcript = None
        entries = doc.get(f["transcripts"]) or []
        if status == "completed":
            if not entries:
                raise InconsistentPayload(f"call {call_id} completed without a transcript")
            times = [_to_ms(e[f["created_at"]]) if e.get(f["created_at"]) is not None else None
                     for e in entries]
            t0 = next((t for t in times if t is not None), 0.0)
            turns, last = [], 0
            for e, t in zip(entries, times):
                speaker = "agent" if str(e.get(f["speaker"], "")).lower() in AGENT_SPEAKERS else "respondent"
                ms = last if t is None else max(last, int(round(t - t0)))
                turns.append(Turn(speaker, str(e.get(f["text"], "")), ms))
                last = ms
            transcript = Transcript(turns)
        price = doc.get(f["price"])
        return CallSession(
            call_id=call_id,
            status=status,
            started_at=doc.get(f["started_at"]),
            ended_at=doc.get(f["ended_at"]),
            transcript=transcript,
            recording_url=doc.get(f["recording_url"]),
            cost_usd=float(price) if price is not None else None,
        )

    def close(self) -> None:
        self._client.close()


# -- simulator ---------------------------------------------------------------

DEFAULT_CONFUSIONS = {
    "male": ["mail"],
    "mail": ["male"],
    "none": ["known"],
    "known": ["none"],
    "four": ["for"],
    "for": ["four"],
}
FILLER_VOCABULARY = (
    "the", "that", "so", "well", "like", "just", "really", "um", "uh", "okay", "right",
    "maybe", "sure", "then", "time", "people", "think", "know", "good", "back", "there",
    "about", "some", "when", "day", "way", "still", "also", "much", "home", "work",
    "kind", "thing", "little", "pretty", "actually", "said", "come", "made", "over",
)


@dataclass(frozen=True)
class NoiseConfig:
    """Per-word corruption probabilities for the simulated transcription channel."""

    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0
    confusion_table: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_CONFUSIONS.items()}
    )
    seed: int = 0

    def __post_init__(self):
        for name in ("p_sub", "p_del", "p_ins"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if self.p_sub + self.p_del > 1.0 + 1e-12:
            raise ValueError("p_sub + p_del must not exceed 1")

    @property
    def silent(self) -> bool:
        return self.p_sub == self.p_del == self.p_ins == 0.0

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | None) -> "NoiseConfig":
        doc = dict(doc or {})
        table = doc.pop("confusion_table", None)
        kw = {k: doc[k] for k in ("p_sub", "p_del", "p_ins", "seed") if k in doc}
        if table is not None:
            kw["confusion_table"] = {k.lower(): tuple(v) for k, v in table.items()}
        return cls(**kw)

    def to_json(self) -> dict:
        return {"p_sub": self.p_sub, "p_del": self.p_del, "p_ins": self.p_ins, "seed": self.seed,
                "confusion_table": {k: list(v) for k, v in self.confusion_table.items()}}


def _substitute(token: str, noise: NoiseConfig, rng) -> str:
    candidates = [w for w in noise.confusion_table.get(token, ()) if w != token]
    if not candidates:
        candidates = [w for w in FILLER_VOCABULARY if w != token]
    return rng.choice(candidates)


def apply_noise(text: str, noise: NoiseConfig, rng) -> str:
    """Corrupt the normalized tokens of ``text`` independently.

    Each token is substituted with probability ``p_sub`` or else deleted
    with probability ``p_del``; independently a filler token is inserted
    after it with probability ``p_ins``. Working on normalized tokens keeps
    the expected error count per reference word equal to the configured
    rates. Noisy text comes back lowercased and unpunctuated, like raw
    recognizer output; silent noise returns ``text`` untouched.
    """
    if noise.silent:
        return text
    out = []
    for token in normalize_text(text):
        r = rng.random()
        if r < noise.p_sub:
            out.append(_substitute(token, noise, rng))
        elif r >= noise.p_sub + noise.p_del:
            out.append(token)
        if rng.random() < noise.p_ins:
            out.append(rng.choice(FILLER_VOCABULARY))
    return " ".join(out)


def simulate_call(
    survey: SurveyDefinition,
    rs: ResponseSet,
    noise: NoiseConfig,
    seed: int,
    call_id: str | None = None,
    cost_per_minute: float = 0.09,
) -> CallSession:
    """Completed call whose transcript is the scripted dialogue with noisy
    respondent turns; the clean dialogue is kept as the reference."""
    clean = render_fictitious_dialogue(survey, rs, seed)
    rng = rng_for(seed, "noise", noise.seed, rs.respondent_id)
    noisy = Transcript(
        Turn(t.speaker, apply_noise(t.text, noise, rng) if t.speaker == "respondent" else t.text, t.start_ms)
        for t in clean.turns
    )
    duration_min = (clean.turns[-1].start_ms + 5000) / 60000 if clean.turns else 0.0
    return CallSession(
        call_id=call_id or f"sim-{rs.respondent_id}",
        status="completed",
        transcript=noisy,
        reference=clean,
        cost_usd=round(cost_per_minute * duration_min, 4),
    )


@dataclass
class _SimCall:
    req: CallRequest
    step: int = 0


class SimulatorGateway(Gateway):
    """Offline stand-in for the phone-agent service.

    Respondents are scripted by ``scripts`` (record id -> gold response set);
    the record id travels in ``CallRequest.metadata["record_id"]``. Each poll
    advances a call one state: queued, dialing, in_progress, then completed
    (or ``no_answer`` for ids in ``fail_records``).
    """

    _PATH = ("queued", "dialing", "in_progress", "completed")

    def __init__(
        self,
        survey: SurveyDefinition,
        scripts: Mapping[str, ResponseSet],
        noise: NoiseConfig = NoiseConfig(),
        seed: int = 0,
        fail_records: frozenset[str] | set[str] = frozenset(),
    ):
        super().__init__()
        self.survey = survey
        self.scripts = dict(scripts)
        self.noise = noise
        self.seed = seed
        self.fail_records = frozenset(fail_records)
        self._calls: dict[str, _SimCall] = {}

    def _dispatch(self, req: CallRequest) -> str:
        record_id = req.metadata.get("record_id")
        if record_id not in self.scripts:
            raise ServiceError(f"simulator has no respondent script for {record_id!r}")
        call_id = f"sim-{req.idempotency_key()[:16]}"
        with self._lock:
            self._calls.setdefault(call_id, _SimCall(req))
        return call_id

    def _fetch(self, call_id: str) -> CallSession:
        with self._lock:
            call = self._calls.get(call_id)
            if call is None:
                raise NotFound(f"unknown call id {call_id!r}")
            step = call.step
            call.step = min(step + 1, len(self._PATH) - 1)
        record_id = call.req.metadata["record_id"]
        status = self._PATH[step]
        meta = dict(call.req.metadata)
        if record_id in self.fail_records and step >= 2:
            return CallSession(call_id, "no_answer", error="simulated failure", metadata=meta)
        if status != "completed":
            return CallSession(call_id, status, metadata=meta)
        done = simulate_call(
            self.survey, self.scripts[record_id], self.noise, self.seed, call_id=call_id
        )
        return replace(done, metadata=meta)


# -- lifecycle ---------------------------------------------------------------


def iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat().replace("+00:00", "Z")


class VirtualClock:
    """Clock whose ``sleep`` advances time instantly; keeps simulated runs reproducible."""

    def __init__(self, start: float = 1735689600.0):
        self.t = start

    def now(self) -> float:
        return self.t

    def sleep(self, seconds: float) -> None:
        self.t += seconds


def run_call(
    gateway: Gateway,
    req: CallRequest,
    poll_interval_s: float = 5.0,
    budget_s: float = 900.0,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
) -> CallSession:
    """Dispatch ``req`` and poll until the call ends or the budget runs out."""
    started = clock()
    call_id = dispatch_call(gateway, req)
    while True:
        session = poll_session(gateway, call_id)
        if session.terminal:
            break
        if clock() - started >= budget_s:
            session = CallSession(call_id, "failed", error="timeout")
            break
        sleep(poll_interval_s)
        if poll_interval_s <= 0 and isinstance(gateway, HttpGateway):
            time.sleep(0.01)
    return replace(
        session,
        started_at=session.started_at or iso(started),
        ended_at=session.ended_at or iso(clock()),
        metadata={**dict(req.metadata), **dict(session.metadata)},
    )
